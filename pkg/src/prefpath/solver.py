"""Serial Linearized Bregman Iteration path solver.

One run produces the whole regularization path: plain gradient steps on the
common coefficient, dual gradient steps on the per-user blocks, and an exact
shrinkage back to the primal blocks. Iterates start from zero, so the path
evolves from the single common ranking toward fully personalized models;
support-change iterations are always snapshotted.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import ComparisonDataset, ModelState, Scores, apply_design, compute_scores, design_adjoint
from .errors import ConfigError, NoConvergence, OutOfRange, StepSizeTooLarge
from .losses import LossFamily, curvature_bound, gradient_residual, require_binary
from .penalty import PenaltyMode, resolve_mode, shrink

_ACC_PAD = 8  # extra doubles per accumulator row; keeps shard rows off shared cache lines


@dataclass
class SolverConfig:
    """Configuration of one path fit.

    alpha may be the literal "auto", which resolves to
    m / (kappa * ||dPhi Phi^T d^T + X X^T||_2) before iterating; any explicit
    alpha must satisfy alpha * kappa * norm / m < 2 or the fit is rejected.
    """

    family: LossFamily | str = LossFamily.BRADLEY_TERRY
    mode: PenaltyMode | str | None = None
    kappa: float = 100.0
    alpha: float | str = "auto"
    max_iters: int = 2000
    record_every: int = 10
    seed: int = 0
    threads: int = 1
    tol_spectral: float = 1e-4

    def __post_init__(self):
        self.family = LossFamily.parse(self.family)
        if self.mode is not None:
            self.mode = PenaltyMode.parse(self.mode)
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.alpha != "auto" and not (isinstance(self.alpha, (int, float)) and self.alpha > 0):
            raise ConfigError(f"alpha must be 'auto' or a positive number, got {self.alpha!r}")
        if self.max_iters < 0 or self.record_every < 1 or self.threads < 1:
            raise ConfigError("max_iters >= 0, record_every >= 1, threads >= 1 required")
        if self.tol_spectral <= 0:
            raise ConfigError("tol_spectral must be positive")


@dataclass(frozen=True)
class SupportEvent:
    """A per-user block entering or leaving the support at path time t."""

    t: float
    user: int
    block: str  # "xi" | "gamma"
    direction: str  # "entered" | "left"


@dataclass
class PathPoint:
    t: float
    eta: np.ndarray
    xi: np.ndarray
    gamma: np.ndarray
    z_xi: np.ndarray
    z_gamma: np.ndarray

    def state(self) -> ModelState:
        return ModelState(
            eta=self.eta.copy(),
            xi=self.xi.copy(),
            gamma=self.gamma.copy(),
            z_xi=self.z_xi.copy(),
            z_gamma=self.z_gamma.copy(),
            t=self.t,
        )


@dataclass
class RegularizationPath:
    """Ordered path snapshots plus support-change events and fit metadata.

    Snapshots keep the dual blocks so any intermediate time can be recovered
    by linear interpolation of (eta, z) followed by shrinkage.
    """

    points: list[PathPoint]
    events: list[SupportEvent]
    config: SolverConfig  # resolved: numeric alpha, concrete mode
    spectral_norm: float
    user_ids: list
    n_items: int
    dim: int
    loss_trace: np.ndarray | None = None  # weighted mean loss at each recorded point

    @property
    def t_max(self) -> float:
        return self.points[-1].t

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def kappa(self) -> float:
        return self.config.kappa

    @property
    def mode(self) -> PenaltyMode:
        return self.config.mode

    @property
    def family(self) -> LossFamily:
        return self.config.family


def _power_iteration(op, size, tol, seed, max_iters=10_000):
    """Largest eigenvalue of the PSD operator `op` by seeded power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    nv = np.linalg.norm(v)
    if nv == 0:
        v[0] = 1.0
        nv = 1.0
    v /= nv
    lam = 0.0
    for _ in range(max_iters):
        sv = op(v)
        lam = float(v @ sv)
        resid = np.linalg.norm(sv - lam * v)
        nv = np.linalg.norm(sv)
        if nv == 0.0:
            return 0.0
        v = sv / nv
        if resid <= tol * max(abs(lam), np.finfo(float).tiny):
            return lam
    raise NoConvergence(
        f"power iteration did not reach tol={tol} within {max_iters} iterations"
    )


def spectral_norm(dataset: ComparisonDataset, tol: float = 1e-4, seed: int = 0) -> float:
    """||dPhi Phi^T d^T + X X^T||_2 via power iteration through the record operators."""

    def op(v):
        a_eta, a_xi, a_gamma = design_adjoint(dataset, v)
        return apply_design(dataset, a_eta, a_xi, a_gamma)

    return _power_iteration(op, dataset.m, tol, seed)


def resolve_run(dataset: ComparisonDataset, config: SolverConfig) -> tuple[SolverConfig, float]:
    """Resolve auto alpha and the penalty mode; enforce the stability bound.

    Returns (resolved config, estimated spectral norm). The resolved config
    always carries a numeric alpha and a concrete penalty mode.
    """
    require_binary(config.family, dataset)
    mode = resolve_mode(config.mode, dataset.features.mode)
    norm = spectral_norm(dataset, config.tol_spectral, config.seed)
    if config.alpha == "auto":
        if norm == 0.0:
            raise ConfigError("cannot auto-resolve alpha: design operator is zero")
        alpha = dataset.m / (config.kappa * norm)
    else:
        alpha = float(config.alpha)
    if alpha * config.kappa * norm / dataset.m >= 2.0:
        raise StepSizeTooLarge(
            f"alpha*kappa*norm/m = {alpha * config.kappa * norm / dataset.m:.3f} >= 2"
        )
    resolved = dataclasses.replace(config, alpha=alpha, mode=mode)
    return resolved, norm


class _Prepared:
    """User-sorted record arrays in the layout the kernels expect."""

    def __init__(self, dataset: ComparisonDataset):
        order = dataset.user_order
        self.dataset = dataset
        self.identity = dataset.features.is_identity
        self.y = np.ascontiguousarray(dataset.y[order])
        self.w = np.ascontiguousarray(dataset.w[order])
        self.starts = dataset.user_starts
        if self.identity:
            self.left = np.ascontiguousarray(dataset.left[order])
            self.right = np.ascontiguousarray(dataset.right[order])
            self.D = None
        else:
            self.D = np.ascontiguousarray(dataset.diffs()[order])
        self.kernel = (
            _kernels.shard_step_identity if self.identity else _kernels.shard_step_dense
        )

    def shard_args(self, users: np.ndarray):
        """Contiguous record slices for the given users (ascending index order)."""
        users = np.asarray(users, dtype=np.int64)
        counts = self.starts[users + 1] - self.starts[users]
        seg_end = np.cumsum(counts)
        seg_start = seg_end - counts
        idx = np.concatenate(
            [np.arange(self.starts[u], self.starts[u + 1]) for u in users]
        ) if len(users) else np.empty(0, dtype=np.int64)
        y = np.ascontiguousarray(self.y[idx])
        w = np.ascontiguousarray(self.w[idx])
        if self.identity:
            data = (
                np.ascontiguousarray(self.left[idx]),
                np.ascontiguousarray(self.right[idx]),
                y,
                w,
            )
        else:
            data = (np.ascontiguousarray(self.D[idx]), y, w)
        return data + (
            np.ascontiguousarray(seg_start.astype(np.int64)),
            np.ascontiguousarray(seg_end.astype(np.int64)),
            users,
        )


class _LiveState:
    """Mutable solver arrays plus the support bookkeeping buffers."""

    def __init__(self, n_users: int, dim: int):
        self.eta = np.zeros(dim)
        self.xi = np.zeros((n_users, dim))
        self.gamma = np.zeros(n_users)
        self.z_xi = np.zeros((n_users, dim))
        self.z_gamma = np.zeros(n_users)
        self.xi_active = np.zeros(n_users, dtype=np.uint8)
        self.gamma_active = np.zeros(n_users, dtype=np.uint8)
        self.evt_xi = np.zeros(n_users, dtype=np.int8)
        self.evt_gamma = np.zeros(n_users, dtype=np.int8)


class _PathRecorder:
    """Collects snapshots and support events during a fit."""

    def __init__(self, live: _LiveState, record_every: int, max_iters: int):
        self.live = live
        self.record_every = record_every
        self.max_iters = max_iters
        self.points: list[PathPoint] = []
        self.events: list[SupportEvent] = []
        self.losses: list[float] = []

    def snapshot(self, t: float, loss: float):
        live = self.live
        self.points.append(
            PathPoint(
                t=t,
                eta=live.eta.copy(),
                xi=live.xi.copy(),
                gamma=live.gamma.copy(),
                z_xi=live.z_xi.copy(),
                z_gamma=live.z_gamma.copy(),
            )
        )
        self.losses.append(loss)

    def should_record(self, k1: int, n_changed: int) -> bool:
        return n_changed > 0 or k1 % self.record_every == 0 or k1 == self.max_iters

    def harvest_events(self, t: float):
        live = self.live
        for u in np.nonzero(live.evt_xi)[0]:
            direction = "entered" if live.evt_xi[u] == 1 else "left"
            self.events.append(SupportEvent(t, int(u), "xi", direction))
        for u in np.nonzero(live.evt_gamma)[0]:
            direction = "entered" if live.evt_gamma[u] == 1 else "left"
            self.events.append(SupportEvent(t, int(u), "gamma", direction))

    def after_iteration(self, k1: int, t: float, n_changed: int, loss: float):
        if n_changed > 0:
            self.harvest_events(t)
        if self.should_record(k1, n_changed):
            self.snapshot(t, loss)


def _build_path(dataset, resolved, norm, recorder) -> RegularizationPath:
    return RegularizationPath(
        points=recorder.points,
        events=recorder.events,
        config=resolved,
        spectral_norm=norm,
        user_ids=list(dataset.user_ids),
        n_items=dataset.n_items,
        dim=dataset.dim,
        loss_trace=np.array(recorder.losses),
    )


def fit_path(
    dataset: ComparisonDataset,
    config: SolverConfig,
    resolved: tuple[SolverConfig, float] | None = None,
) -> RegularizationPath:
    """Run the iteration from the all-zero model and record the path.

    `resolved` may carry a precomputed (resolved config, spectral norm) pair
    from resolve_run to skip the power iteration.
    """
    cfg, norm = resolve_run(dataset, config) if resolved is None else resolved
    prep = _Prepared(dataset)
    live = _LiveState(dataset.n_users, dataset.dim)
    recorder = _PathRecorder(live, cfg.record_every, cfg.max_iters)
    recorder.snapshot(0.0, _initial_loss(cfg.family, dataset))

    family = _kernels.FAMILY_CODES[cfg.family.value]
    mode = _kernels.MODE_CODES[cfg.mode.value]
    d_acc = dataset.n_items if prep.identity else dataset.dim
    accs = np.zeros((1, d_acc + _ACC_PAD))
    scratch = np.empty(1)
    args = prep.shard_args(np.arange(dataset.n_users, dtype=np.int64))
    alpha_over_m = cfg.alpha / dataset.m
    eta_step = cfg.alpha * cfg.kappa / dataset.m

    for k in range(cfg.max_iters):
        loss, n_changed = prep.kernel(
            *args,
            live.eta,
            live.xi,
            live.gamma,
            live.z_xi,
            live.z_gamma,
            live.xi_active,
            live.gamma_active,
            live.evt_xi,
            live.evt_gamma,
            accs[0],
            family,
            mode,
            alpha_over_m,
            cfg.kappa,
        )
        _kernels.eta_update(live.eta, accs, 0, live.eta.shape[0], eta_step, 1, scratch)
        t = (k + 1) * cfg.alpha
        recorder.after_iteration(k + 1, t, n_changed, loss / dataset.m)
    return _build_path(dataset, cfg, norm, recorder)


def _initial_loss(family: LossFamily, dataset: ComparisonDataset) -> float:
    from .losses import loss_value

    return loss_value(family, dataset, np.zeros(dataset.m))


def hodgerank_baseline(dataset: ComparisonDataset, family: LossFamily | str) -> Scores:
    """Common-ranking-only fit: minimize the loss over eta with all per-user
    blocks frozen at zero, by gradient descent to gradient norm <= 1e-8.

    This is the comparison baseline: the same model with zero personalization.
    """
    family = LossFamily.parse(family)
    require_binary(family, dataset)
    U, d = dataset.n_users, dataset.dim
    zeros_xi = np.zeros((U, d))
    zeros_gamma = np.zeros(U)

    def hessian_op(v):
        pred = apply_design(dataset, v, zeros_xi, zeros_gamma)
        return design_adjoint(dataset, dataset.w * pred / dataset.m)[0]

    lam = _power_iteration(hessian_op, d, 1e-6, seed=0)
    if lam == 0.0:
        raise NoConvergence("design operator is zero; nothing to fit")
    step = 1.0 / (curvature_bound(family) * lam)
    eta = np.zeros(d)
    for _ in range(200_000):
        pred = apply_design(dataset, eta, zeros_xi, zeros_gamma)
        g = gradient_residual(family, dataset, pred)
        grad = design_adjoint(dataset, dataset.w * g / dataset.m)[0]
        if np.linalg.norm(grad) <= 1e-8:
            break
        eta -= step * grad
    else:
        raise NoConvergence("baseline gradient descent did not reach tolerance 1e-8")
    state = ModelState(eta=eta, xi=zeros_xi, gamma=zeros_gamma)
    return compute_scores(state, dataset.features)


def interpolate_state(
    path: RegularizationPath,
    t_query: float,
    kappa: float | None = None,
    mode: PenaltyMode | str | None = None,
) -> ModelState:
    """State at any path time: linear interpolation of (eta, z) between the
    bracketing snapshots, then shrinkage to recover (xi, gamma).

    A query exactly at a recorded time returns that snapshot verbatim.
    """
    kappa = path.kappa if kappa is None else kappa
    mode = path.mode if mode is None else PenaltyMode.parse(mode)
    times = path.times
    if t_query < 0 or t_query > times[-1]:
        raise OutOfRange(f"t={t_query} outside the fitted path [0, {times[-1]}]")
    pos = int(np.searchsorted(times, t_query))
    if pos < len(times) and times[pos] == t_query:
        return path.points[pos].state()
    lo, hi = path.points[pos - 1], path.points[pos]
    theta = (t_query - lo.t) / (hi.t - lo.t)
    eta = (1.0 - theta) * lo.eta + theta * hi.eta
    z_xi = (1.0 - theta) * lo.z_xi + theta * hi.z_xi
    z_gamma = (1.0 - theta) * lo.z_gamma + theta * hi.z_gamma
    xi, gamma = shrink(mode, kappa, z_xi, z_gamma)
    return ModelState(eta=eta, xi=xi, gamma=gamma, z_xi=z_xi, z_gamma=z_gamma, t=t_query)
