"""Synthetic crowdsourced-comparison generator with known ground truth.

Items get i.i.d. standard normal features; the common coefficient, per-user
deviations and per-user position biases are sparse with configurable nonzero
probabilities; each user labels a unirandom number of ordered item pairs with
outcomes drawn from the chosen response model. Every user draws from an own
counter-based (Philox) substream, so generation is reproducible regardless of
how it is parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .data import ComparisonDataset, FeatureMatrix, ModelState
from .errors import ConfigError
from .losses import LossFamily


@dataclass
class SimConfig:
    n_items: int = 20
    dim: int = 10
    n_users: int = 100
    p_common_nonzero: float = 0.4
    p_dev_nonzero: float = 0.4
    p_bias_nonzero: float = 0.4
    bias_sd: float = 2.0
    n_range: tuple[int, int] = (50, 200)
    family: LossFamily | str = LossFamily.BRADLEY_TERRY
    seed: int = 0

    def __post_init__(self):
        self.family = LossFamily.parse(self.family)
        for p in (self.p_common_nonzero, self.p_dev_nonzero, self.p_bias_nonzero):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability {p} outside [0, 1]")
        if self.n_range[0] > self.n_range[1] or self.n_range[0] < 1:
            raise ConfigError(f"bad per-user sample range {self.n_range}")
        if self.n_items < 2 or self.dim < 1 or self.n_users < 1:
            raise ConfigError("need at least 2 items, 1 feature, 1 user")
        if self.bias_sd < 0:
            raise ConfigError("bias_sd must be nonnegative")


def response_probability(family: LossFamily, predictor: np.ndarray) -> np.ndarray:
    """P(outcome = +1 | predictor) under the binary response models."""
    family = LossFamily.parse(family)
    if family is LossFamily.BRADLEY_TERRY:
        return expit(predictor)
    if family is LossFamily.THURSTONE_MOSTELLER:
        return ndtr(predictor)
    raise ConfigError("the linear response model is real-valued, not binary")


def _sparse_normal(rng, shape, p_nonzero, sd=1.0):
    mask = rng.random(shape) < p_nonzero
    values = rng.normal(0.0, sd, size=shape)
    return np.where(mask, values, 0.0)


def generate(config: SimConfig) -> tuple[ComparisonDataset, ModelState]:
    """Draw a dataset and return it together with the generating parameters.

    The returned ground-truth state carries no dual blocks (they exist only
    for solver-produced states).
    """
    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(config.n_users + 1)
    rng_global = np.random.Generator(np.random.Philox(streams[0]))

    phi = rng_global.standard_normal((config.n_items, config.dim))
    eta = _sparse_normal(rng_global, config.dim, config.p_common_nonzero)

    users = []
    lefts = []
    rights = []
    outcomes = []
    xi = np.zeros((config.n_users, config.dim))
    gamma = np.zeros(config.n_users)
    n_lo, n_hi = config.n_range
    linear = config.family is LossFamily.LINEAR
    for u in range(config.n_users):
        rng = np.random.Generator(np.random.Philox(streams[u + 1]))
        xi[u] = _sparse_normal(rng, config.dim, config.p_dev_nonzero)
        if rng.random() < config.p_bias_nonzero:
            gamma[u] = rng.normal(0.0, config.bias_sd)
        n_u = int(rng.integers(n_lo, n_hi + 1))
        left = rng.integers(0, config.n_items, size=n_u)
        right = rng.integers(0, config.n_items - 1, size=n_u)
        right = right + (right >= left)  # uniform over distinct ordered pairs
        pred = (phi[left] - phi[right]) @ (eta + xi[u]) + gamma[u]
        if linear:
            y = pred + rng.standard_normal(n_u)
        else:
            p_win = response_probability(config.family, pred)
            y = np.where(rng.random(n_u) < p_win, 1.0, -1.0)
        users.append(np.full(n_u, u, dtype=np.int64))
        lefts.append(left.astype(np.int64))
        rights.append(right.astype(np.int64))
        outcomes.append(y)

    m = int(sum(len(a) for a in users))
    dataset = ComparisonDataset(
        users=np.concatenate(users),
        left=np.concatenate(lefts),
        right=np.concatenate(rights),
        y=np.concatenate(outcomes),
        w=np.ones(m),
        features=FeatureMatrix.explicit(phi),
        user_ids=[f"u{u:03d}" for u in range(config.n_users)],
        item_ids=[f"i{i:03d}" for i in range(config.n_items)],
    )
    truth = ModelState(eta=eta, xi=xi, gamma=gamma)
    return dataset, truth
