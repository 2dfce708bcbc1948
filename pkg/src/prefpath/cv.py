"""K-fold cross-validation over path time, with held-out mismatch scoring.

Each fold refits the path on the remaining data with the step size resolved
once on the full data, so every fold covers the same time grid; fold states
at grid times come from (eta, z) interpolation plus shrinkage. The selected
time is the grid point with minimal mean held-out mismatch, ties broken
toward the sparser (smaller) time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import ComparisonDataset, FeatureMatrix, ModelState, Scores
from .errors import (
    ConfigError,
    EmptyFold,
    EmptyTestSet,
    GridExceedsPath,
    StepSizeTooLarge,
)
from .solver import RegularizationPath, SolverConfig, fit_path, interpolate_state


@dataclass
class CvConfig:
    folds: int = 5
    t_grid: np.ndarray | None = None  # None -> uniform grid over the pilot path
    split_mode: str = "by_record"  # "by_record" | "by_item"
    seed: int = 0
    n_grid: int = 50

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.folds}")
        if self.split_mode not in ("by_record", "by_item"):
            raise ConfigError(f"unknown split mode {self.split_mode!r}")
        if self.t_grid is not None:
            self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
            if self.t_grid.ndim != 1 or self.t_grid.size == 0:
                raise ConfigError("t_grid must be a nonempty 1-d array")
            if np.any(self.t_grid < 0):
                raise ConfigError("t_grid times must be nonnegative")
            if self.t_grid.size > 1 and np.any(np.diff(self.t_grid) <= 0):
                raise ConfigError("t_grid must be strictly increasing")
        if self.n_grid < 1:
            raise ConfigError("n_grid must be positive")


@dataclass
class CvReport:
    errors: np.ndarray  # folds x grid
    mean_errors: np.ndarray
    t_grid: np.ndarray
    t_cv: float
    tie_policy_applied: bool
    pilot_path: RegularizationPath | None = None
    selected_state: ModelState | None = None


def _sign_mismatch(pred: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> float:
    """Fraction of records whose predicted sign disagrees with the outcome sign.

    A zero predictor (or zero outcome) counts half a mismatch.
    """
    sp = np.sign(pred)
    sy = np.sign(y)
    per = np.where((sp == 0) | (sy == 0), 0.5, (sp != sy).astype(np.float64))
    return float(np.mean(per))


def _predictors(
    eta: np.ndarray,
    xi: np.ndarray,
    gamma: np.ndarray,
    features: FeatureMatrix,
    users: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    personalized: bool,
) -> np.ndarray:
    """Per-record predictor; users outside 0..n_users-1 fall back to the common model."""
    if features.is_identity:
        base = eta[left] - eta[right]
    else:
        D = features.data[left] - features.data[right]
        base = D @ eta
    pred = base
    if personalized:
        pred = base.copy()
        known = (users >= 0) & (users < gamma.shape[0])
        uk = users[known]
        if features.is_identity:
            dev = xi[uk, left[known]] - xi[uk, right[known]]
        else:
            dev = np.einsum("kd,kd->k", D[known], xi[uk])
        pred[known] += dev + gamma[uk]
    return pred


def _as_arrays(test, user_index=None):
    if isinstance(test, ComparisonDataset):
        return test.users, test.left, test.right, test.y, test.features
    records = list(test)
    if len(records) == 0:
        raise EmptyTestSet("no test records")
    users = np.empty(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        if isinstance(r.user, (int, np.integer)) and user_index is None:
            users[i] = r.user
        else:
            users[i] = (user_index or {}).get(r.user, -1)
    left = np.fromiter((r.left for r in records), dtype=np.int64)
    right = np.fromiter((r.right for r in records), dtype=np.int64)
    y = np.fromiter((r.outcome for r in records), dtype=np.float64)
    return users, left, right, y, None


def mismatch_ratio(
    model: ModelState | Scores,
    test,
    personalized: bool = True,
    features: FeatureMatrix | None = None,
    user_index: dict | None = None,
) -> float:
    """Held-out sign-mismatch of a fitted model on test records in [0, 1].

    `test` is a ComparisonDataset or a list of ComparisonRecord. With
    `personalized` the per-user deviation and bias are used whenever the
    record's user is known to the model; otherwise (and for unknown users)
    only the common predictor is used. Zero predictors count 0.5.
    """
    users, left, right, y, ds_features = _as_arrays(test, user_index)
    if len(y) == 0:
        raise EmptyTestSet("no test records")
    if isinstance(model, Scores):
        common = model.common
        base = common[left] - common[right]
        if not personalized:
            return _sign_mismatch(base, y)
        pred = base.copy()
        known = (users >= 0) & (users < model.personalized.shape[0])
        uk = users[known]
        pred[known] = (
            model.personalized[uk, left[known]]
            - model.personalized[uk, right[known]]
            + (model.gamma[uk] if model.gamma is not None else 0.0)
        )
        return _sign_mismatch(pred, y)
    features = features if features is not None else ds_features
    if features is None:
        raise ConfigError("mismatch_ratio needs a FeatureMatrix when given a ModelState")
    pred = _predictors(model.eta, model.xi, model.gamma, features, users, left, right, personalized)
    return _sign_mismatch(pred, y)


def _fold_ids(m: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(m)
    fold = np.empty(m, dtype=np.int64)
    fold[perm] = np.arange(m) % folds
    return fold


def split_by_items(
    dataset: ComparisonDataset, train_fraction: float = 0.75, seed: int = 0
) -> tuple[ComparisonDataset, ComparisonDataset]:
    """Item-level train/test split: any comparison touching a held-out item
    goes to the test set, so every test record involves at least one item the
    training stage never saw."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n = dataset.n_items
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    test_items = np.zeros(n, dtype=bool)
    test_items[perm[n_train:]] = True
    in_test = test_items[dataset.left] | test_items[dataset.right]
    if not in_test.any() or in_test.all():
        raise EmptyFold("item split produced an empty train or test side")
    return dataset.subset(~in_test), dataset.subset(in_test)


def _fold_masks(dataset: ComparisonDataset, cv_config: CvConfig):
    """Per fold: (train mask, test mask) over records."""
    m = dataset.m
    masks = []
    if cv_config.split_mode == "by_record":
        fold = _fold_ids(m, cv_config.folds, cv_config.seed)
        for k in range(cv_config.folds):
            test = fold == k
            masks.append((~test, test))
    else:
        rng = np.random.default_rng(cv_config.seed)
        groups = np.array_split(rng.permutation(dataset.n_items), cv_config.folds)
        for g in groups:
            held = np.zeros(dataset.n_items, dtype=bool)
            held[g] = True
            test = held[dataset.left] | held[dataset.right]
            masks.append((~test, test))
    for train, test in masks:
        if not train.any() or not test.any():
            raise EmptyFold("a fold has an empty train or test side")
    return masks


def run_cv(
    dataset: ComparisonDataset,
    solver_config: SolverConfig,
    cv_config: CvConfig,
) -> CvReport:
    """Cross-validate the stopping time over a grid of path times.

    Fits one pilot path on all data (reused as the final model), fixes its
    step size for the fold fits so all paths span the same time range, scores
    every fold at every grid time with the personalized sign mismatch, and
    selects the grid time with minimal mean error.
    """
    if solver_config.max_iters < 1:
        raise ConfigError("cross-validation needs max_iters >= 1")
    pilot = _fit(dataset, solver_config)
    if cv_config.t_grid is None:
        grid = np.linspace(0.0, pilot.t_max, cv_config.n_grid)
    else:
        grid = cv_config.t_grid
        if grid[-1] > pilot.t_max:
            raise GridExceedsPath(
                f"grid reaches t={grid[-1]} but the fitted path ends at {pilot.t_max}"
            )
    masks = _fold_masks(dataset, cv_config)
    fold_cfg = dataclasses.replace(solver_config, alpha=pilot.alpha, mode=pilot.mode)
    errors = np.empty((cv_config.folds, grid.size))
    for k, (train_mask, test_mask) in enumerate(masks):
        train = dataset.subset(np.flatnonzero(train_mask))
        test = dataset.subset(np.flatnonzero(test_mask))
        try:
            fold_path = _fit(train, fold_cfg)
        except StepSizeTooLarge:
            # degenerate fold whose operator norm outgrew the full-data bound:
            # refit with an own auto step covering the same time range
            auto_cfg = dataclasses.replace(fold_cfg, alpha="auto")
            fold_path = _fit_covering(train, auto_cfg, grid[-1])
        if grid[-1] > fold_path.t_max:
            raise GridExceedsPath(
                f"fold {k} path ends at {fold_path.t_max} before grid end {grid[-1]}"
            )
        for j, t in enumerate(grid):
            state = interpolate_state(fold_path, float(t))
            pred = _predictors(
                state.eta, state.xi, state.gamma, dataset.features,
                test.users, test.left, test.right, personalized=True,
            )
            errors[k, j] = _sign_mismatch(pred, test.y)
    mean_errors = errors.mean(axis=0)
    minimizers = np.flatnonzero(mean_errors == mean_errors.min())
    t_cv = float(grid[minimizers[0]])
    report = CvReport(
        errors=errors,
        mean_errors=mean_errors,
        t_grid=grid,
        t_cv=t_cv,
        tie_policy_applied=bool(minimizers.size > 1),
        pilot_path=pilot,
        selected_state=interpolate_state(pilot, t_cv),
    )
    return report


def _fit(dataset, config) -> RegularizationPath:
    if config.threads > 1:
        from .parallel import fit_path_parallel

        return fit_path_parallel(dataset, config)
    return fit_path(dataset, config)


def _fit_covering(dataset, config, t_end) -> RegularizationPath:
    """Fit with auto alpha but enough iterations to cover time t_end."""
    from .solver import resolve_run

    resolved, norm = resolve_run(dataset, config)
    iters = int(np.ceil(t_end / resolved.alpha)) + 1
    resolved = dataclasses.replace(resolved, max_iters=iters)
    return _fit(dataset, resolved)
