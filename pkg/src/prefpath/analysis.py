"""Post-hoc analyses of fitted paths: who deviates first, who clicks one side,
and how personalized rankings differ from the common one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ComparisonDataset, ModelState, Scores
from .solver import RegularizationPath, SupportEvent

__all__ = ["SupportEvent", "deviation_ranking", "bias_report", "rank_compare", "BiasRow"]


def deviation_ranking(path: RegularizationPath) -> list:
    """Users ordered by the first time their deviation block became nonzero.

    Users whose deviation never entered the support come last; ties break by
    user id. Returns user ids when the path carries them, else indices.
    """
    n_users = len(path.user_ids)
    first_t = np.full(n_users, np.inf)
    for ev in path.events:
        if ev.block == "xi" and ev.direction == "entered" and not np.isfinite(first_t[ev.user]):
            first_t[ev.user] = ev.t
    ids = path.user_ids if path.user_ids else list(range(n_users))
    order = sorted(range(n_users), key=lambda u: (first_t[u], ids[u]))
    return [ids[u] for u in order]


@dataclass(frozen=True)
class BiasRow:
    user: object
    gamma: float
    left_clicks: int
    right_clicks: int


def bias_report(
    state: ModelState,
    dataset: ComparisonDataset,
    path: RegularizationPath | None = None,
) -> list[BiasRow]:
    """Per-user position-bias estimates with left/right click counts.

    Rows are sorted by the first entry time of the bias block when a path is
    supplied, else by decreasing |gamma|; zero-bias users always come last.
    """
    U = dataset.n_users
    left_clicks = np.bincount(dataset.users, weights=(dataset.y > 0).astype(float), minlength=U)
    right_clicks = np.bincount(dataset.users, weights=(dataset.y < 0).astype(float), minlength=U)
    first_t = np.full(U, np.inf)
    if path is not None:
        for ev in path.events:
            if ev.block == "gamma" and ev.direction == "entered" and not np.isfinite(first_t[ev.user]):
                first_t[ev.user] = ev.t
    ids = dataset.user_ids

    def key(u):
        nonzero = state.gamma[u] != 0.0
        if path is not None:
            return (not nonzero, first_t[u], -abs(state.gamma[u]), ids[u])
        return (not nonzero, -abs(state.gamma[u]), ids[u])

    order = sorted(range(U), key=key)
    return [
        BiasRow(ids[u], float(state.gamma[u]), int(left_clicks[u]), int(right_clicks[u]))
        for u in order
    ]


def _dense_ranks(scores: np.ndarray) -> np.ndarray:
    """Dense descending ranks: best score gets 1, equal scores share a rank."""
    uniq = np.unique(scores)[::-1]
    return np.searchsorted(-uniq, -scores) + 1


def rank_compare(scores: Scores, users=None) -> np.ndarray:
    """Item-rank matrix: first row the common ranking, one row per user after.

    `users` selects (dense indices) and orders the user rows; all users by
    default. Ties share the minimum rank, dense-compressed to 1..k.
    """
    if users is None:
        users = range(scores.personalized.shape[0])
    rows = [_dense_ranks(scores.common)]
    for u in users:
        rows.append(_dense_ranks(scores.personalized[u]))
    return np.vstack(rows)


def save_deviation_ranking(order, file_path):
    """CSV `rank,user` of users by first deviation-entry time."""
    lines = ["rank,user"] + [f"{i + 1},{u}" for i, u in enumerate(order)]
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_bias_report(rows, file_path):
    """CSV `user,gamma,left_clicks,right_clicks` in report order."""
    lines = ["user,gamma,left_clicks,right_clicks"]
    for r in rows:
        lines.append(f"{r.user},{repr(r.gamma)},{r.left_clicks},{r.right_clicks}")
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_rank_matrix(ranks: np.ndarray, file_path, row_labels=None):
    """CSV of the rank_compare matrix; first column labels the rows."""
    n = ranks.shape[1]
    labels = row_labels or (["common"] + [f"user{i}" for i in range(ranks.shape[0] - 1)])
    lines = ["row," + ",".join(f"item{j}" for j in range(n))]
    for label, row in zip(labels, ranks):
        lines.append(label + "," + ",".join(str(int(v)) for v in row))
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
