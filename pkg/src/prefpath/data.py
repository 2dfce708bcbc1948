"""Core data model: comparison records, feature matrices, parameter blocks.

A dataset is a multigraph of (user, left, right, outcome, weight) records over
n items, together with an n x d feature matrix. The implied design matrix
(one column block per user plus a per-user intercept block) is never
materialized; `apply_design` / `design_adjoint` implement it record-by-record.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DisconnectedGraphWarning,
    EmptyDataset,
    InvalidRecord,
    ItemIndexOutOfRange,
)


@dataclass(frozen=True)
class ComparisonRecord:
    """One pairwise comparison as presented: `outcome > 0` means the user preferred `left`.

    Records are stored with their presentation orientation so that the
    per-user intercept keeps its left-click-bias meaning.
    """

    user: str | int
    left: int
    right: int
    outcome: float
    weight: float = 1.0

    def __post_init__(self):
        if self.left == self.right:
            raise InvalidRecord(f"record compares item {self.left} with itself")
        if self.weight < 0:
            raise InvalidRecord(f"negative confidence weight {self.weight}")


@dataclass(frozen=True)
class FeatureMatrix:
    """Item features, either an explicit dense n x d matrix or an implicit identity.

    Identity mode means d == n and row i is the i-th standard basis vector;
    the matrix itself is never materialized.
    """

    n_items: int
    dim: int
    data: np.ndarray | None  # None in identity mode
    mode: str  # "identity" | "explicit"

    @classmethod
    def identity(cls, n_items: int) -> "FeatureMatrix":
        return cls(n_items=n_items, dim=n_items, data=None, mode="identity")

    @classmethod
    def explicit(cls, data: np.ndarray) -> "FeatureMatrix":
        data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if data.ndim != 2:
            raise DimensionMismatch("feature matrix must be 2-dimensional")
        return cls(n_items=data.shape[0], dim=data.shape[1], data=data, mode="explicit")

    @property
    def is_identity(self) -> bool:
        return self.mode == "identity"

    def scores(self, coef: np.ndarray) -> np.ndarray:
        """Per-item scores Phi @ coef (coef itself in identity mode)."""
        if coef.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"coefficient length {coef.shape[-1]} != feature dim {self.dim}"
            )
        if self.is_identity:
            return np.array(coef, dtype=np.float64, copy=True)
        return coef @ self.data.T

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        if (self.mode, self.n_items, self.dim) != (other.mode, other.n_items, other.dim):
            return False
        if self.is_identity:
            return True
        return np.array_equal(self.data, other.data)


class ComparisonDataset:
    """Validated, densely indexed comparison data plus item features.

    Users are reindexed to 0..n_users-1 (sorted id order); the original ids
    are kept in `user_ids`. Record arrays preserve input order. Instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(self, users, left, right, y, w, features, user_ids, item_ids=None):
        self.users = np.ascontiguousarray(users, dtype=np.int64)
        self.left = np.ascontiguousarray(left, dtype=np.int64)
        self.right = np.ascontiguousarray(right, dtype=np.int64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.features = features
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids) if item_ids is not None else None
        self._validate()
        # user-sorted view used by the solver kernels and the adjoint
        self._order = np.argsort(self.users, kind="stable")
        self._user_starts = np.searchsorted(
            self.users[self._order], np.arange(self.n_users + 1)
        ).astype(np.int64)
        self._diffs = None
        self._diffs_sorted = None

    def _validate(self):
        m = self.users.shape[0]
        if m == 0:
            raise EmptyDataset("dataset contains no comparison records")
        for arr in (self.left, self.right, self.y, self.w):
            if arr.shape[0] != m:
                raise DimensionMismatch("record arrays have inconsistent lengths")
        n = self.features.n_items
        lo = int(min(self.left.min(), self.right.min()))
        hi = int(max(self.left.max(), self.right.max()))
        if lo < 0 or hi >= n:
            bad = hi if hi >= n else lo
            raise ItemIndexOutOfRange(f"record references item {bad} but only {n} items have features")
        if np.any(self.left == self.right):
            k = int(np.argmax(self.left == self.right))
            raise InvalidRecord(f"record {k} compares item {int(self.left[k])} with itself")
        if np.any(self.w < 0):
            raise InvalidRecord("negative confidence weight")
        if self.users.min() < 0 or self.users.max() >= len(self.user_ids):
            raise DimensionMismatch("user indices out of range of the id map")

    # -- basic shape info ---------------------------------------------------
    @property
    def m(self) -> int:
        return self.users.shape[0]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return self.features.n_items

    @property
    def dim(self) -> int:
        return self.features.dim

    @property
    def is_binary(self) -> bool:
        return bool(np.all(np.abs(self.y) == 1.0))

    @property
    def user_order(self) -> np.ndarray:
        return self._order

    @property
    def user_starts(self) -> np.ndarray:
        """Segment offsets of each user's records in the user-sorted order."""
        return self._user_starts

    def diffs(self) -> np.ndarray:
        """Per-record feature differences phi_left - phi_right (explicit mode only)."""
        if self.features.is_identity:
            raise DimensionMismatch("identity features have no dense difference rows")
        if self._diffs is None:
            self._diffs = np.ascontiguousarray(
                self.features.data[self.left] - self.features.data[self.right]
            )
        return self._diffs

    def records(self) -> list[ComparisonRecord]:
        ids = self.user_ids
        return [
            ComparisonRecord(ids[u], int(l), int(r), float(yy), float(ww))
            for u, l, r, yy, ww in zip(self.users, self.left, self.right, self.y, self.w)
        ]

    def subset(self, indices) -> "ComparisonDataset":
        """Row subset sharing this dataset's features and id maps (no reindexing)."""
        indices = np.asarray(indices)
        return ComparisonDataset(
            self.users[indices],
            self.left[indices],
            self.right[indices],
            self.y[indices],
            self.w[indices],
            self.features,
            self.user_ids,
            self.item_ids,
        )

    def __eq__(self, other):
        if not isinstance(other, ComparisonDataset):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and self.features == other.features
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.w, other.w)
        )


def _sort_ids(ids):
    # ints sort numerically, strings lexicographically; ints before strings
    return sorted(ids, key=lambda v: (isinstance(v, str), v))


def build_dataset(records: Sequence[ComparisonRecord], features: FeatureMatrix) -> ComparisonDataset:
    """Validate records against `features` and densely reindex users.

    Warns (DisconnectedGraphWarning) when the comparison graph on items is
    disconnected; scores are then only comparable within components.
    """
    if len(records) == 0:
        raise EmptyDataset("no comparison records")
    user_ids = _sort_ids({r.user for r in records})
    index = {u: i for i, u in enumerate(user_ids)}
    users = np.fromiter((index[r.user] for r in records), dtype=np.int64, count=len(records))
    left = np.fromiter((r.left for r in records), dtype=np.int64, count=len(records))
    right = np.fromiter((r.right for r in records), dtype=np.int64, count=len(records))
    y = np.fromiter((r.outcome for r in records), dtype=np.float64, count=len(records))
    w = np.fromiter((r.weight for r in records), dtype=np.float64, count=len(records))
    dataset = ComparisonDataset(users, left, right, y, w, features, user_ids)
    if not _items_connected(dataset):
        warnings.warn(
            "comparison graph on items is disconnected", DisconnectedGraphWarning, stacklevel=2
        )
    return dataset


def _items_connected(dataset: ComparisonDataset) -> bool:
    n = dataset.n_items
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in zip(dataset.left, dataset.right):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return len({find(i) for i in range(n)}) == 1


@dataclass
class ModelState:
    """Parameter blocks at one path point.

    `eta` is the common coefficient, `xi[u]` the per-user deviation, `gamma[u]`
    the per-user left-side bias. `z_xi`/`z_gamma` are the dual blocks the
    solver iterates on; solver-produced states always satisfy
    (xi, gamma) == shrink(kappa, z_xi, z_gamma). States not produced by the
    solver (e.g. simulation ground truth) may carry z blocks of None.
    """

    eta: np.ndarray
    xi: np.ndarray  # (n_users, dim)
    gamma: np.ndarray  # (n_users,)
    z_xi: np.ndarray | None = None
    z_gamma: np.ndarray | None = None
    t: float = 0.0

    @classmethod
    def zeros(cls, n_users: int, dim: int, t: float = 0.0) -> "ModelState":
        return cls(
            eta=np.zeros(dim),
            xi=np.zeros((n_users, dim)),
            gamma=np.zeros(n_users),
            z_xi=np.zeros((n_users, dim)),
            z_gamma=np.zeros(n_users),
            t=t,
        )

    @property
    def n_users(self) -> int:
        return self.gamma.shape[0]

    @property
    def dim(self) -> int:
        return self.eta.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(
            eta=self.eta.copy(),
            xi=self.xi.copy(),
            gamma=self.gamma.copy(),
            z_xi=None if self.z_xi is None else self.z_xi.copy(),
            z_gamma=None if self.z_gamma is None else self.z_gamma.copy(),
            t=self.t,
        )


@dataclass
class Scores:
    """Per-item scores: the common ranking and one personalized row per user.

    Invariant: personalized[u] - common == Phi @ xi[u] for every user.
    `gamma` is carried along so sign predictions can include the position bias.
    """

    common: np.ndarray  # (n_items,)
    personalized: np.ndarray  # (n_users, n_items)
    gamma: np.ndarray | None = None


def _check_state(state: ModelState, dataset: ComparisonDataset):
    if state.dim != dataset.dim or state.n_users != dataset.n_users:
        raise DimensionMismatch(
            f"state ({state.n_users} users, dim {state.dim}) does not match "
            f"dataset ({dataset.n_users} users, dim {dataset.dim})"
        )


def apply_design(dataset: ComparisonDataset, eta, xi, gamma) -> np.ndarray:
    """Linear predictor per record: (phi_l - phi_r)^T (eta + xi[u]) + gamma[u]."""
    u = dataset.users
    if dataset.features.is_identity:
        coef = eta + xi  # (U, n) via broadcast
        pred = (
            coef[u, dataset.left]
            - coef[u, dataset.right]
            + gamma[u]
        )
    else:
        D = dataset.diffs()
        pred = D @ eta + np.einsum("kd,kd->k", D, xi[u]) + gamma[u]
    return pred


def design_adjoint(dataset: ComparisonDataset, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of the implied design applied to a per-record vector v.

    Returns (a_eta, a_xi, a_gamma): a_eta = sum_k v_k (phi_l - phi_r),
    a_xi[u] the same sum restricted to user u's records, a_gamma[u] the sum
    of v over user u's records.
    """
    v = np.asarray(v, dtype=np.float64)
    order = dataset.user_order
    starts = dataset.user_starts
    U = dataset.n_users
    a_gamma = np.bincount(dataset.users, weights=v, minlength=U)
    if dataset.features.is_identity:
        n = dataset.n_items
        flat_l = dataset.users * n + dataset.left
        flat_r = dataset.users * n + dataset.right
        a_xi = (
            np.bincount(flat_l, weights=v, minlength=U * n)
            - np.bincount(flat_r, weights=v, minlength=U * n)
        ).reshape(U, n)
        a_eta = np.bincount(dataset.left, weights=v, minlength=n) - np.bincount(
            dataset.right, weights=v, minlength=n
        )
    else:
        D = dataset.diffs()
        a_eta = D.T @ v
        contrib = v[order, None] * D[order]
        a_xi = np.zeros((U, dataset.dim))
        nonempty = starts[:-1] < starts[1:]
        if np.any(nonempty):
            red = np.add.reduceat(contrib, starts[:-1][nonempty], axis=0)
            a_xi[nonempty] = red
    return a_eta, a_xi, a_gamma


def predict_linear(state: ModelState, dataset: ComparisonDataset) -> np.ndarray:
    """Predictor vector of length m for `state` on `dataset`'s records."""
    _check_state(state, dataset)
    return apply_design(dataset, state.eta, state.xi, state.gamma)


def compute_scores(state: ModelState, features: FeatureMatrix) -> Scores:
    """Common and personalized per-item scores.

    In identity mode scores are gauge-fixed by centering the common scores to
    zero mean (the same shift is applied to every personalized row, so the
    personalized - common = Phi xi identity is preserved).
    """
    if state.dim != features.dim:
        raise DimensionMismatch(
            f"state dim {state.dim} != feature dim {features.dim}"
        )
    common = features.scores(state.eta)
    personalized = features.scores(state.eta[None, :] + state.xi)
    if features.is_identity:
        shift = common.mean()
        common = common - shift
        personalized = personalized - shift
    return Scores(common=common, personalized=personalized, gamma=state.gamma.copy())
