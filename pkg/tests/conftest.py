import numpy as np
import pytest

import prefpath as pp


def make_dense_dataset(rng, n_users=4, n_items=6, dim=3, m=40, binary=True, weights=None):
    phi = rng.standard_normal((n_items, dim))
    users = rng.integers(0, n_users, m)
    left = rng.integers(0, n_items, m)
    right = rng.integers(0, n_items - 1, m)
    right = right + (right >= left)
    if binary:
        y = np.where(rng.random(m) < 0.5, 1.0, -1.0)
    else:
        y = rng.standard_normal(m)
    w = np.ones(m) if weights is None else weights
    return pp.ComparisonDataset(
        users, left, right, y, w,
        pp.FeatureMatrix.explicit(phi),
        user_ids=[f"u{k}" for k in range(n_users)],
    )


def make_identity_dataset(rng, n_users=3, n_items=5, m=30, binary=True):
    users = rng.integers(0, n_users, m)
    left = rng.integers(0, n_items, m)
    right = rng.integers(0, n_items - 1, m)
    right = right + (right >= left)
    y = np.where(rng.random(m) < 0.5, 1.0, -1.0) if binary else rng.standard_normal(m)
    return pp.ComparisonDataset(
        users, left, right, y, np.ones(m),
        pp.FeatureMatrix.identity(n_items),
        user_ids=[f"u{k}" for k in range(n_users)],
    )


def random_state(rng, n_users, dim, scale=1.0):
    return pp.ModelState(
        eta=scale * rng.standard_normal(dim),
        xi=scale * rng.standard_normal((n_users, dim)),
        gamma=scale * rng.standard_normal(n_users),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dense_dataset(rng):
    return make_dense_dataset(rng)


@pytest.fixture
def identity_dataset(rng):
    return make_identity_dataset(rng)


@pytest.fixture(scope="session")
def sim_dataset():
    dataset, truth = pp.generate(pp.SimConfig(seed=0))
    return dataset, truth
