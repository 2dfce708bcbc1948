"""Synchronized parallel LBI: user-sharded workers with two barriers per iteration.

Each worker owns a disjoint set of users (balanced by record count with
greedy bin packing) and runs the gradient/dual/shrink phase on its shard.
After the first barrier every worker applies the common-coefficient update to
its own index block, reducing the per-shard accumulators in a fixed binary
tree order so results are bit-identical across runs at a fixed thread count.
The second barrier closes the iteration; bookkeeping iterations add a third
so snapshots never race with the next gradient phase.
"""

from __future__ import annotations

import dataclasses
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import ComparisonDataset
from .errors import ConfigError
from .solver import (
    _ACC_PAD,
    _LiveState,
    _PathRecorder,
    _Prepared,
    RegularizationPath,
    SolverConfig,
    _build_path,
    _initial_loss,
    resolve_run,
)


@dataclass
class ShardPlan:
    """Disjoint, jointly exhaustive user shards plus common-coefficient blocks."""

    user_shards: list[np.ndarray]
    eta_blocks: list[tuple[int, int]]
    record_counts: np.ndarray

    @property
    def n_shards(self) -> int:
        return len(self.user_shards)


def make_shard_plan(dataset: ComparisonDataset, n_shards: int) -> ShardPlan:
    """Greedy bin packing of users onto shards, balancing total record count.

    Users are taken in decreasing record count (ties by user index) and
    assigned to the currently lightest shard; each shard then processes its
    users in ascending index order.
    """
    if n_shards < 1:
        raise ConfigError(f"need at least one shard, got {n_shards}")
    U = dataset.n_users
    counts = np.bincount(dataset.users, minlength=U)
    order = np.lexsort((np.arange(U), -counts))
    loads = np.zeros(n_shards)
    members: list[list[int]] = [[] for _ in range(n_shards)]
    for u in order:
        i = int(np.argmin(loads))  # first minimum: deterministic
        members[i].append(int(u))
        loads[i] += counts[u]
    user_shards = [np.array(sorted(ms), dtype=np.int64) for ms in members]
    d = dataset.dim if not dataset.features.is_identity else dataset.n_items
    bounds = np.linspace(0, d, n_shards + 1).astype(int)
    eta_blocks = [(int(bounds[i]), int(bounds[i + 1])) for i in range(n_shards)]
    return ShardPlan(user_shards=user_shards, eta_blocks=eta_blocks, record_counts=loads)


class BarrierLog:
    """Optional instrumentation: an append-only log of barrier crossings.

    Workers append ("phase", iteration, thread) markers immediately before
    and after each barrier wait, so tests can verify that no thread starts a
    phase before every thread finished the previous one.
    """

    def __init__(self):
        self.entries: list[tuple[str, int, int]] = []

    def note(self, phase: str, iteration: int, thread: int):
        self.entries.append((phase, iteration, thread))


def fit_path_parallel(
    dataset: ComparisonDataset,
    config: SolverConfig,
    resolved: tuple[SolverConfig, float] | None = None,
    instrument: BarrierLog | None = None,
) -> RegularizationPath:
    """Parallel fit, numerically equivalent to fit_path.

    With one thread the reduction order matches the serial solver exactly, so
    the path is bit-identical; with more threads the only divergence source is
    the floating-point reduction order of the per-shard accumulators.
    """
    cfg, norm = resolve_run(dataset, config) if resolved is None else resolved
    P = cfg.threads
    plan = make_shard_plan(dataset, P)
    prep = _Prepared(dataset)
    live = _LiveState(dataset.n_users, dataset.dim)
    recorder = _PathRecorder(live, cfg.record_every, cfg.max_iters)
    recorder.snapshot(0.0, _initial_loss(cfg.family, dataset))
    if cfg.max_iters == 0:
        return _build_path(dataset, cfg, norm, recorder)

    family = _kernels.FAMILY_CODES[cfg.family.value]
    mode = _kernels.MODE_CODES[cfg.mode.value]
    d_acc = dataset.n_items if prep.identity else dataset.dim
    accs = np.zeros((P, d_acc + _ACC_PAD))
    shard_args = [prep.shard_args(plan.user_shards[i]) for i in range(P)]
    alpha_over_m = cfg.alpha / dataset.m
    eta_step = cfg.alpha * cfg.kappa / dataset.m

    barrier_acc = threading.Barrier(P)
    barrier_eta = threading.Barrier(P)
    barrier_record = threading.Barrier(P)
    loss_parts = [0.0] * P
    changed = [0] * P
    failures: list[BaseException] = []

    def worker(i: int):
        args = shard_args[i]
        acc_row = accs[i]
        j0, j1 = plan.eta_blocks[i]
        scratch = np.empty(P)
        kernel = prep.kernel
        try:
            for k in range(cfg.max_iters):
                loss_parts[i], changed[i] = kernel(
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
                    acc_row,
                    family,
                    mode,
                    alpha_over_m,
                    cfg.kappa,
                )
                if instrument is not None:
                    instrument.note("accumulate_done", k, i)
                barrier_acc.wait()
                if instrument is not None:
                    instrument.note("eta_update_start", k, i)
                # every worker sees all shards' change flags here: they are
                # final after the first barrier and rewritten only after the
                # second, so all workers take the same bookkeeping branch
                n_changed = sum(changed)
                _kernels.eta_update(live.eta, accs, j0, j1, eta_step, P, scratch)
                if instrument is not None:
                    instrument.note("eta_update_done", k, i)
                barrier_eta.wait()
                if recorder.should_record(k + 1, n_changed):
                    if i == 0:
                        recorder.after_iteration(
                            k + 1, (k + 1) * cfg.alpha, n_changed, sum(loss_parts) / dataset.m
                        )
                    barrier_record.wait()
                    if instrument is not None:
                        instrument.note("record_done", k, i)
        except BaseException as exc:  # pragma: no cover - propagation path
            failures.append(exc)
            barrier_acc.abort()
            barrier_eta.abort()
            barrier_record.abort()
            raise

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(P)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        raise failures[0]
    return _build_path(dataset, cfg, norm, recorder)


def run_benchmark(
    dataset: ComparisonDataset,
    config: SolverConfig,
    threads_list: list[int],
    repeats: int = 3,
) -> list[tuple[int, float, float]]:
    """Mean wall time T(M) and speedup S(M) = T(1)/T(M) per thread count.

    The spectral norm / step size are resolved once so every run executes the
    same iteration schedule; a small warmup run amortizes kernel compilation.
    """
    if 1 not in threads_list:
        threads_list = [1] + list(threads_list)
    base, norm = resolve_run(dataset, config)
    warm = dataclasses.replace(base, max_iters=min(base.max_iters, 3))
    fit_path_parallel(dataset, warm, resolved=(warm, norm))
    rows = []
    t1 = None
    for M in threads_list:
        cfg = dataclasses.replace(base, threads=M)
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            fit_path_parallel(dataset, cfg, resolved=(cfg, norm))
            times.append(time.perf_counter() - start)
        mean_t = float(np.mean(times))
        if M == 1:
            t1 = mean_t
        rows.append((M, mean_t, t1 / mean_t if t1 else float("nan")))
    return rows
