"""Command-line front end: simulate, fit, cv, evaluate, export-path, bench.

Every fitting command prints the fully resolved configuration (including the
auto-resolved step size and the estimated spectral norm) before iterating.
Module errors map to stable exit codes (see EXIT_CODES / README); outputs are
byte-identical for identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io as pio
from .cv import CvConfig, _predictors, _sign_mismatch, run_cv
from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateFeatureRow,
    EmptyDataset,
    EmptyFold,
    EmptyTestSet,
    GridExceedsPath,
    HashMismatch,
    HeaderMismatch,
    InvalidRecord,
    ItemIndexOutOfRange,
    NoConvergence,
    NonBinaryOutcomeForGLM,
    OutOfRange,
    ParseError,
    PrefpathError,
    StepSizeTooLarge,
)
from .parallel import fit_path_parallel, run_benchmark
from .simulate import SimConfig, generate
from .solver import SolverConfig, fit_path, interpolate_state, resolve_run

EXIT_CODES = {
    ConfigError: 3,
    ParseError: 10,
    HeaderMismatch: 11,
    DuplicateFeatureRow: 12,
    HashMismatch: 13,
    EmptyDataset: 20,
    InvalidRecord: 21,
    ItemIndexOutOfRange: 22,
    DimensionMismatch: 23,
    NonBinaryOutcomeForGLM: 24,
    StepSizeTooLarge: 30,
    NoConvergence: 31,
    OutOfRange: 32,
    GridExceedsPath: 40,
    EmptyFold: 41,
    EmptyTestSet: 42,
}
INTERNAL_ERROR = 70


def _add_data_args(p):
    p.add_argument("--comparisons", required=True, help="comparisons CSV")
    p.add_argument(
        "--features",
        default="identity",
        help="feature CSV, or the literal 'identity' (default)",
    )


def _add_solver_args(p):
    p.add_argument("--loss", default="bt", choices=["linear", "bt", "tm"])
    p.add_argument(
        "--penalty",
        default=None,
        choices=["group", "entrywise"],
        help="default: group for identity features, entrywise otherwise",
    )
    p.add_argument("--kappa", type=float, default=100.0)
    p.add_argument("--alpha", default="auto", help="'auto' or a positive step size")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol-spectral", type=float, default=1e-4)


def _solver_config(ns) -> SolverConfig:
    alpha = ns.alpha
    if alpha != "auto":
        try:
            alpha = float(alpha)
        except ValueError:
            raise ConfigError(f"--alpha must be 'auto' or a number, got {alpha!r}")
    return SolverConfig(
        family=ns.loss,
        mode=ns.penalty,
        kappa=ns.kappa,
        alpha=alpha,
        max_iters=ns.iters,
        record_every=ns.record_every,
        seed=ns.seed,
        threads=ns.threads,
        tol_spectral=ns.tol_spectral,
    )


def _load(ns, index_map_out=None):
    features = None if ns.features == "identity" else ns.features
    return pio.load_dataset(ns.comparisons, features, index_map_out=index_map_out)


def _print_resolved(cfg: SolverConfig, norm: float, dataset):
    print(f"config family={cfg.family.value} penalty={cfg.mode.value} kappa={pio._fmt(cfg.kappa)}")
    print(f"config alpha={pio._fmt(cfg.alpha)} spectral_norm={pio._fmt(norm)}")
    print(
        f"config iters={cfg.max_iters} record_every={cfg.record_every} "
        f"threads={cfg.threads} seed={cfg.seed} tol_spectral={pio._fmt(cfg.tol_spectral)}"
    )
    print(
        f"config records={dataset.m} users={dataset.n_users} "
        f"items={dataset.n_items} dim={dataset.dim}"
    )


def _fit_with(dataset, cfg, resolved):
    if cfg.threads > 1:
        return fit_path_parallel(dataset, cfg, resolved=resolved)
    return fit_path(dataset, cfg, resolved=resolved)


def cmd_fit(ns) -> int:
    index_map = ns.index_map_out if ns.index_map_out else ns.out + ".indexmap.json"
    dataset = _load(ns, index_map_out=index_map)
    config = _solver_config(ns)
    resolved, norm = resolve_run(dataset, config)
    _print_resolved(resolved, norm, dataset)
    path = _fit_with(dataset, resolved, (resolved, norm))
    pio.save_path(path, ns.out, dataset)
    print(f"path snapshots={len(path.points)} events={len(path.events)} t_max={pio._fmt(path.t_max)}")
    print(f"wrote {ns.out}")
    return 0


def cmd_cv(ns) -> int:
    dataset = _load(ns, index_map_out=ns.out_prefix + "indexmap.json")
    config = _solver_config(ns)
    resolved, norm = resolve_run(dataset, config)
    _print_resolved(resolved, norm, dataset)
    grid = None
    if ns.t_grid != "auto":
        grid = np.array(
            [float(tok) for tok in pio._read_lines(ns.t_grid) if tok.strip()]
        )
    cv_config = CvConfig(
        folds=ns.folds, t_grid=grid, split_mode=ns.split, seed=ns.seed, n_grid=ns.grid_points
    )
    report = run_cv(dataset, resolved, cv_config)
    pio.save_cv_report(report, ns.out_prefix + "cv_report.csv")
    pio.save_state(
        report.selected_state, ns.out_prefix + "state.json", dataset, dataset.user_ids
    )
    pio.save_path(report.pilot_path, ns.out_prefix + "path.jsonl", dataset)
    at = int(np.flatnonzero(report.t_grid == report.t_cv)[0])
    print(f"t_cv={pio._fmt(report.t_cv)} mean_error={pio._fmt(report.mean_errors[at])}")
    print(f"wrote {ns.out_prefix}cv_report.csv {ns.out_prefix}state.json {ns.out_prefix}path.jsonl")
    return 0


def _load_model(ns, dataset):
    """Model file -> (state, user_ids); path files honor --t, state files forbid it."""
    lines = pio._read_lines(ns.model)
    try:
        kind = json.loads(lines[0]).get("kind") if lines else None
    except json.JSONDecodeError:
        kind = None
    if kind == "path":
        path = pio.load_path(ns.model, dataset)
        state = interpolate_state(path, ns.t) if ns.t is not None else path.points[-1].state()
        return state, path.user_ids
    if kind == "state":
        if ns.t is not None:
            raise ConfigError("--t only applies to path files")
        state, header = pio.load_state(ns.model, dataset)
        user_ids = header.get("user_ids") or dataset.user_ids
        return state, user_ids
    raise HeaderMismatch(f"{ns.model} is neither a path nor a state file")


def cmd_evaluate(ns) -> int:
    dataset = _load(ns)
    state, user_ids = _load_model(ns, dataset)
    if state.dim != dataset.dim:
        raise DimensionMismatch(
            f"model dim {state.dim} does not match dataset dim {dataset.dim}"
        )
    test_path = ns.test if ns.test is not None else ns.comparisons
    rows = pio.read_comparison_rows(test_path)
    if not rows:
        raise EmptyTestSet(f"{test_path} contains no records")
    user_index = {str(u): i for i, u in enumerate(user_ids)}
    item_index = {str(i): k for k, i in enumerate(pio.dataset_item_ids(dataset))}
    users, left, right, y, w = pio.map_comparison_rows(rows, user_index, item_index)
    for personalized, label in ((False, "common"), (True, "personalized")):
        pred = _predictors(
            state.eta, state.xi, state.gamma, dataset.features, users, left, right, personalized
        )
        print(f"{label},{pio._fmt(_sign_mismatch(pred, y))}")
    return 0


def cmd_export_path(ns) -> int:
    dataset = _load(ns)
    path = pio.load_path(ns.path, dataset)
    pio.export_path_tables(path, ns.blocks_out, ns.events_out)
    print(f"wrote {ns.blocks_out} {ns.events_out}")
    return 0


def cmd_bench(ns) -> int:
    dataset = _load(ns)
    config = _solver_config(ns)
    resolved, norm = resolve_run(dataset, config)
    _print_resolved(resolved, norm, dataset)
    threads = [int(tok) for tok in ns.threads_list.split(",") if tok]
    rows = run_benchmark(dataset, resolved, threads, repeats=ns.repeats)
    pio.save_benchmark(rows, ns.out)
    for m, t, s in rows:
        print(f"threads={m} mean_seconds={pio._fmt(t)} speedup={pio._fmt(s)}")
    print(f"wrote {ns.out}")
    return 0


def cmd_simulate(ns) -> int:
    config = SimConfig(
        n_items=ns.items,
        dim=ns.dim,
        n_users=ns.users,
        p_common_nonzero=ns.p_common,
        p_dev_nonzero=ns.p_dev,
        p_bias_nonzero=ns.p_bias,
        bias_sd=ns.bias_sd,
        n_range=(ns.n_min, ns.n_max),
        family=ns.loss,
        seed=ns.seed,
    )
    print(
        f"config items={config.n_items} dim={config.dim} users={config.n_users} "
        f"p_common={pio._fmt(config.p_common_nonzero)} p_dev={pio._fmt(config.p_dev_nonzero)} "
        f"p_bias={pio._fmt(config.p_bias_nonzero)} bias_sd={pio._fmt(config.bias_sd)} "
        f"n_range=[{ns.n_min},{ns.n_max}] family={config.family.value} seed={config.seed}"
    )
    dataset, truth = generate(config)
    pio.save_dataset(dataset, ns.out_prefix + "comparisons.csv", ns.out_prefix + "features.csv")
    pio.save_state(truth, ns.out_prefix + "truth.json", dataset, dataset.user_ids)
    print(f"records={dataset.m} users={dataset.n_users} items={dataset.n_items}")
    print(
        f"wrote {ns.out_prefix}comparisons.csv {ns.out_prefix}features.csv {ns.out_prefix}truth.json"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefpath",
        description="Mixed-effects preference models over pairwise comparisons",
    )
    parser.add_argument(
        "--config",
        default=None,
        help="JSON file whose keys mirror the long flag names; explicit flags win",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p.add_argument("--items", type=int, default=20)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--users", type=int, default=100)
    p.add_argument("--p-common", type=float, default=0.4)
    p.add_argument("--p-dev", type=float, default=0.4)
    p.add_argument("--p-bias", type=float, default=0.4)
    p.add_argument("--bias-sd", type=float, default=2.0)
    p.add_argument("--n-min", type=int, default=50)
    p.add_argument("--n-max", type=int, default=200)
    p.add_argument("--loss", default="bt", choices=["linear", "bt", "tm"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one regularization path")
    _add_data_args(p)
    _add_solver_args(p)
    p.add_argument("--out", required=True, help="output path file (JSONL)")
    p.add_argument(
        "--index-map-out",
        default=None,
        help="dense user/item index map sidecar (default: <out>.indexmap.json)",
    )
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validate the stopping time")
    _add_data_args(p)
    _add_solver_args(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--t-grid", default="auto", help="'auto' or a file with one t per line")
    p.add_argument("--grid-points", type=int, default=50)
    p.add_argument("--split", default="by_record", choices=["by_record", "by_item"])
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("evaluate", help="mismatch ratio of a fitted model on test records")
    _add_data_args(p)
    p.add_argument("--model", required=True, help="path (JSONL) or state (JSON) file")
    p.add_argument("--test", default=None, help="test comparisons CSV (default: --comparisons)")
    p.add_argument("--t", type=float, default=None, help="path time to evaluate (path models)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-path", help="export a path file to plot-ready CSV tables")
    _add_data_args(p)
    p.add_argument("--path", required=True)
    p.add_argument("--blocks-out", required=True)
    p.add_argument("--events-out", required=True)
    p.set_defaults(func=cmd_export_path)

    p = sub.add_parser("bench", help="parallel solver timing table")
    _add_data_args(p)
    _add_solver_args(p)
    p.add_argument("--threads-list", default="1,2,4,8")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config_file(parser, argv):
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config is None:
        return
    try:
        with open(known.config, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"config file: {exc}")
    if not isinstance(values, dict):
        raise ParseError("config file must hold a JSON object")
    defaults = {key.replace("-", "_"): value for key, value in values.items()}
    for action in parser._subparsers._group_actions[0].choices.values():
        action.set_defaults(**{k: v for k, v in defaults.items()
                               if any(a.dest == k for a in action._actions)})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except PrefpathError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(type(exc), 1)
    except Exception as exc:  # never panic: unexpected failures get a stable code
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
