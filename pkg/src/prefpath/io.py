"""File formats: datasets (CSV), paths (JSONL), states (JSON), CV reports (CSV).

All writers are byte-deterministic: UTF-8, LF line endings, shortest
round-trip float formatting, fixed key order. Path and state files carry a
content hash of the dataset they were fitted on and refuse to load against
different data.
"""

from __future__ import annotations

import hashlib
import json
import re

import numpy as np

from .cv import CvReport
from .data import ComparisonDataset, FeatureMatrix, ModelState
from .errors import (
    DuplicateFeatureRow,
    EmptyDataset,
    HashMismatch,
    HeaderMismatch,
    ParseError,
)
from .losses import LossFamily
from .penalty import PenaltyMode
from .solver import PathPoint, RegularizationPath, SolverConfig, SupportEvent

FORMAT_VERSION = 1

COMPARISON_HEADER = "user,left,right,y,weight"
IDENTITY_TOKEN = "identity"


def _fmt(x: float) -> str:
    return repr(float(x))


def _default_item_ids(n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"{i:0{width}d}" for i in range(n)]


def dataset_item_ids(dataset: ComparisonDataset) -> list[str]:
    if dataset.item_ids is not None:
        return [str(i) for i in dataset.item_ids]
    return _default_item_ids(dataset.n_items)


def _check_ids(ids):
    for i in ids:
        s = str(i)
        if "," in s or "\n" in s:
            raise ParseError(f"id {s!r} contains a delimiter and cannot be serialized")


def _comparisons_text(dataset: ComparisonDataset) -> str:
    items = dataset_item_ids(dataset)
    _check_ids(dataset.user_ids)
    _check_ids(items)
    lines = [COMPARISON_HEADER]
    for u, l, r, y, w in zip(dataset.users, dataset.left, dataset.right, dataset.y, dataset.w):
        lines.append(
            f"{dataset.user_ids[u]},{items[l]},{items[r]},{_fmt(y)},{_fmt(w)}"
        )
    return "\n".join(lines) + "\n"


def _features_text(dataset: ComparisonDataset) -> str:
    if dataset.features.is_identity:
        return IDENTITY_TOKEN + "\n" + ",".join(dataset_item_ids(dataset)) + "\n"
    items = dataset_item_ids(dataset)
    d = dataset.dim
    header = "item," + ",".join(f"f{j}" for j in range(d))
    lines = [header]
    for i in range(dataset.n_items):
        row = ",".join(_fmt(v) for v in dataset.features.data[i])
        lines.append(f"{items[i]},{row}")
    return "\n".join(lines) + "\n"


def dataset_hash(dataset: ComparisonDataset) -> str:
    """sha256 over the canonical serialized dataset (comparisons + features)."""
    h = hashlib.sha256()
    h.update(b"prefpath-dataset-v1\n")
    h.update(_comparisons_text(dataset).encode("utf-8"))
    h.update(b"\x00")
    h.update(_features_text(dataset).encode("utf-8"))
    return h.hexdigest()


def save_dataset(dataset: ComparisonDataset, comparisons_path, features_path=None):
    """Write the comparison CSV (and the feature CSV unless identity mode)."""
    with open(comparisons_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_comparisons_text(dataset))
    if features_path is not None and not dataset.features.is_identity:
        with open(features_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_features_text(dataset))


def _read_lines(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


_FEATURE_HEADER_RE = re.compile(r"^item(,f\d+)+$")


def _load_features(path):
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty feature file", line=1)
    header = lines[0]
    if not _FEATURE_HEADER_RE.match(header):
        raise HeaderMismatch(f"feature header {header!r} does not match 'item,f0,...'")
    names = header.split(",")[1:]
    if names != [f"f{j}" for j in range(len(names))]:
        raise HeaderMismatch("feature columns must be named f0..f{d-1} in order")
    d = len(names)
    ids, rows = [], []
    seen = set()
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != d + 1:
            raise ParseError(f"expected {d + 1} fields, got {len(parts)}", line=ln)
        item = parts[0]
        if item in seen:
            raise DuplicateFeatureRow(f"item {item!r} defined twice (line {ln})")
        seen.add(item)
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), line=ln) from exc
        ids.append(item)
    if not ids:
        raise ParseError("feature file has no item rows", line=2)
    return ids, np.array(rows, dtype=np.float64)


def read_comparison_rows(comparisons_path) -> list[tuple]:
    """Parse a comparisons CSV into raw (user, left, right, y, weight, line) tuples.

    Ids stay opaque strings; no reindexing happens here.
    """
    lines = _read_lines(comparisons_path)
    if not lines:
        raise ParseError("empty comparisons file", line=1)
    header = lines[0]
    if header not in (COMPARISON_HEADER, "user,left,right,y"):
        raise HeaderMismatch(
            f"comparisons header {header!r}; expected {COMPARISON_HEADER!r} (weight optional)"
        )
    has_weight = header == COMPARISON_HEADER
    raw = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != (5 if has_weight else 4):
            raise ParseError(f"expected {5 if has_weight else 4} fields, got {len(parts)}", line=ln)
        user, left, right = parts[0], parts[1], parts[2]
        try:
            y = float(parts[3])
            w = float(parts[4]) if has_weight else 1.0
        except ValueError as exc:
            raise ParseError(str(exc), line=ln) from exc
        if left == right:
            raise ParseError(f"record compares item {left!r} with itself", line=ln)
        if w < 0:
            raise ParseError(f"negative weight {w}", line=ln)
        raw.append((user, left, right, y, w, ln))
    return raw


def map_comparison_rows(raw, user_index: dict, item_index: dict):
    """Map raw rows onto existing dense indices.

    Unknown users map to -1 (prediction falls back to the common model);
    unknown items are an error because they have no features or scores.
    """
    m = len(raw)
    users = np.empty(m, dtype=np.int64)
    left = np.empty(m, dtype=np.int64)
    right = np.empty(m, dtype=np.int64)
    y = np.empty(m)
    w = np.empty(m)
    for k, (u, l, r, yy, ww, ln) in enumerate(raw):
        users[k] = user_index.get(u, -1)
        try:
            left[k] = item_index[l]
            right[k] = item_index[r]
        except KeyError as exc:
            raise ParseError(f"item {exc.args[0]!r} has no feature row", line=ln) from exc
        y[k] = yy
        w[k] = ww
    return users, left, right, y, w


def load_dataset(comparisons_path, features_path=None, index_map_out=None) -> ComparisonDataset:
    """Load and validate a dataset; ids are reindexed in lexicographic order.

    `features_path` is a feature CSV or the literal token "identity" (or None,
    same thing). With `index_map_out`, the dense user/item index maps are
    written there as JSON.
    """
    raw = read_comparison_rows(comparisons_path)
    if not raw:
        raise EmptyDataset(f"{comparisons_path} contains no records")

    identity = features_path is None or features_path == IDENTITY_TOKEN
    if identity:
        item_ids = sorted({r[1] for r in raw} | {r[2] for r in raw})
        features = FeatureMatrix.identity(len(item_ids))
    else:
        item_ids, data = _load_features(features_path)
        order = np.argsort(np.array(item_ids, dtype=object))
        item_ids = [item_ids[i] for i in order]
        features = FeatureMatrix.explicit(data[order])
    item_index = {i: k for k, i in enumerate(item_ids)}

    user_ids = sorted({r[0] for r in raw})
    user_index = {u: k for k, u in enumerate(user_ids)}
    users, left, right, y, w = map_comparison_rows(raw, user_index, item_index)
    dataset = ComparisonDataset(users, left, right, y, w, features, user_ids, item_ids)
    if index_map_out is not None:
        with open(index_map_out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"format_version": FORMAT_VERSION, "users": user_ids, "items": item_ids}, fh)
            fh.write("\n")
    return dataset


# -- path files ---------------------------------------------------------------


def _config_dict(config: SolverConfig) -> dict:
    return {
        "family": config.family.value,
        "mode": config.mode.value if config.mode is not None else None,
        "kappa": config.kappa,
        "alpha": config.alpha,
        "max_iters": config.max_iters,
        "record_every": config.record_every,
        "seed": config.seed,
        "threads": config.threads,
        "tol_spectral": config.tol_spectral,
    }


def _config_from_dict(d: dict) -> SolverConfig:
    return SolverConfig(
        family=LossFamily.parse(d["family"]),
        mode=None if d["mode"] is None else PenaltyMode.parse(d["mode"]),
        kappa=d["kappa"],
        alpha=d["alpha"],
        max_iters=d["max_iters"],
        record_every=d["record_every"],
        seed=d["seed"],
        threads=d["threads"],
        tol_spectral=d["tol_spectral"],
    )


def save_path(path: RegularizationPath, file_path, dataset: ComparisonDataset):
    """Write a path as JSONL: one header object, then one snapshot per line."""
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "path",
        "dataset_hash": dataset_hash(dataset),
        "config": _config_dict(path.config),
        "spectral_norm": path.spectral_norm,
        "n_users": len(path.user_ids),
        "n_items": path.n_items,
        "dim": path.dim,
        "user_ids": [str(u) for u in path.user_ids],
        "events": [[ev.t, ev.user, ev.block, ev.direction] for ev in path.events],
    }
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, p in enumerate(path.points):
            line = {
                "t": p.t,
                "loss": None if path.loss_trace is None else float(path.loss_trace[i]),
                "eta": p.eta.tolist(),
                "xi": p.xi.tolist(),
                "gamma": p.gamma.tolist(),
                "z_xi": p.z_xi.tolist(),
                "z_gamma": p.z_gamma.tolist(),
            }
            fh.write(json.dumps(line) + "\n")


def _check_header(header: dict, kind: str):
    if header.get("format_version") != FORMAT_VERSION:
        raise HeaderMismatch(f"unsupported format_version {header.get('format_version')!r}")
    if header.get("kind") != kind:
        raise HeaderMismatch(f"expected a {kind} file, got kind={header.get('kind')!r}")


def _check_hash(header: dict, dataset: ComparisonDataset | None):
    if dataset is not None and header.get("dataset_hash") != dataset_hash(dataset):
        raise HashMismatch(
            "stored artifact was produced from a different dataset "
            f"(stored {header.get('dataset_hash')!r})"
        )


def load_path(file_path, dataset: ComparisonDataset | None = None) -> RegularizationPath:
    """Load a path file; verifies the dataset hash when a dataset is given."""
    lines = _read_lines(file_path)
    if not lines:
        raise ParseError("empty path file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), line=1) from exc
    _check_header(header, "path")
    _check_hash(header, dataset)
    points = []
    losses = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=ln) from exc
        points.append(
            PathPoint(
                t=float(obj["t"]),
                eta=np.array(obj["eta"], dtype=np.float64),
                xi=np.array(obj["xi"], dtype=np.float64),
                gamma=np.array(obj["gamma"], dtype=np.float64),
                z_xi=np.array(obj["z_xi"], dtype=np.float64),
                z_gamma=np.array(obj["z_gamma"], dtype=np.float64),
            )
        )
        losses.append(obj.get("loss"))
    if not points:
        raise ParseError("path file has no snapshots", line=2)
    ts = [p.t for p in points]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ParseError("snapshot times are not strictly increasing")
    events = [
        SupportEvent(float(t), int(u), str(block), str(direction))
        for t, u, block, direction in header.get("events", [])
    ]
    loss_trace = None
    if all(l is not None for l in losses):
        loss_trace = np.array(losses, dtype=np.float64)
    return RegularizationPath(
        points=points,
        events=events,
        config=_config_from_dict(header["config"]),
        spectral_norm=header["spectral_norm"],
        user_ids=list(header["user_ids"]),
        n_items=header["n_items"],
        dim=header["dim"],
        loss_trace=loss_trace,
    )


# -- state files --------------------------------------------------------------


def save_state(state: ModelState, file_path, dataset: ComparisonDataset | None = None,
               user_ids=None):
    obj = {
        "format_version": FORMAT_VERSION,
        "kind": "state",
        "dataset_hash": None if dataset is None else dataset_hash(dataset),
        "t": state.t,
        "user_ids": None if user_ids is None else [str(u) for u in user_ids],
        "eta": state.eta.tolist(),
        "xi": state.xi.tolist(),
        "gamma": state.gamma.tolist(),
        "z_xi": None if state.z_xi is None else state.z_xi.tolist(),
        "z_gamma": None if state.z_gamma is None else state.z_gamma.tolist(),
    }
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj) + "\n")


def load_state(file_path, dataset: ComparisonDataset | None = None):
    """Returns (state, header dict); verifies the hash when a dataset is given
    and the file carries one."""
    lines = _read_lines(file_path)
    if not lines:
        raise ParseError("empty state file", line=1)
    try:
        obj = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), line=1) from exc
    _check_header(obj, "state")
    if obj.get("dataset_hash") is not None:
        _check_hash(obj, dataset)
    state = ModelState(
        eta=np.array(obj["eta"], dtype=np.float64),
        xi=np.array(obj["xi"], dtype=np.float64),
        gamma=np.array(obj["gamma"], dtype=np.float64),
        z_xi=None if obj["z_xi"] is None else np.array(obj["z_xi"], dtype=np.float64),
        z_gamma=None if obj["z_gamma"] is None else np.array(obj["z_gamma"], dtype=np.float64),
        t=float(obj["t"]),
    )
    return state, obj


# -- cv reports ---------------------------------------------------------------


def save_cv_report(report: CvReport, file_path):
    """Long-format CSV: one row per (fold, t), then mean rows, then summary."""
    lines = ["row,t,error"]
    for k in range(report.errors.shape[0]):
        for t, e in zip(report.t_grid, report.errors[k]):
            lines.append(f"fold{k},{_fmt(t)},{_fmt(e)}")
    for t, e in zip(report.t_grid, report.mean_errors):
        lines.append(f"mean,{_fmt(t)},{_fmt(e)}")
    at = int(np.flatnonzero(report.t_grid == report.t_cv)[0])
    lines.append(f"selected,{_fmt(report.t_cv)},{_fmt(report.mean_errors[at])}")
    lines.append(f"tie_policy_applied,,{1 if report.tie_policy_applied else 0}")
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_benchmark(rows, file_path):
    """CSV of (threads, mean seconds, speedup)."""
    lines = ["threads,mean_seconds,speedup"]
    for m, t, s in rows:
        lines.append(f"{m},{_fmt(t)},{_fmt(s)}")
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def export_path_tables(path: RegularizationPath, blocks_out, events_out):
    """Plot-ready tidy CSVs: per-block path values and support events.

    Blocks: every common coefficient (signed), each user's deviation norm and
    bias value. Events: one row per support change.
    """
    ids = [str(u) for u in path.user_ids]
    lines = ["t,block,value"]
    for p in path.points:
        for j in range(path.dim):
            lines.append(f"{_fmt(p.t)},eta[{j}],{_fmt(p.eta[j])}")
        norms = np.sqrt(np.sum(p.xi * p.xi, axis=1))
        for u, uid in enumerate(ids):
            lines.append(f"{_fmt(p.t)},xi:{uid},{_fmt(norms[u])}")
        for u, uid in enumerate(ids):
            lines.append(f"{_fmt(p.t)},gamma:{uid},{_fmt(p.gamma[u])}")
    with open(blocks_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    lines = ["t,user,block,direction"]
    for ev in path.events:
        lines.append(f"{_fmt(ev.t)},{ids[ev.user]},{ev.block},{ev.direction}")
    with open(events_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
