import numpy as np
import pytest
from scipy import stats

import prefpath as pp


def test_deterministic_and_seed_sensitive():
    a, ta = pp.generate(pp.SimConfig(seed=5))
    b, tb = pp.generate(pp.SimConfig(seed=5))
    c, _ = pp.generate(pp.SimConfig(seed=6))
    assert a == b
    np.testing.assert_array_equal(ta.eta, tb.eta)
    assert a != c


def test_default_generator_scale(sim_dataset):
    dataset, truth = sim_dataset
    assert dataset.n_users == 100
    assert dataset.n_items == 20
    assert dataset.dim == 10
    assert 5000 <= dataset.m <= 20000
    assert dataset.is_binary
    # about 40% of users carry a nonzero bias (binomial 0.99 band)
    n_biased = int(np.sum(truth.gamma != 0))
    sd = np.sqrt(100 * 0.4 * 0.6)
    assert abs(n_biased - 40) <= 2.58 * sd
    # per-entry deviation sparsity near 0.4 over 1000 entries
    frac = np.mean(truth.xi != 0)
    assert abs(frac - 0.4) <= 2.58 * np.sqrt(0.4 * 0.6 / truth.xi.size)
    # per-user sample counts inside the configured range
    counts = np.bincount(dataset.users, minlength=100)
    assert counts.min() >= 50 and counts.max() <= 200


def test_null_model_symmetry():
    cfg = pp.SimConfig(
        n_users=800, p_common_nonzero=0.0, p_dev_nonzero=0.0, p_bias_nonzero=0.0, seed=2
    )
    dataset, truth = pp.generate(cfg)
    assert np.all(truth.eta == 0) and np.all(truth.xi == 0) and np.all(truth.gamma == 0)
    assert dataset.m >= 10**5 * 0.4  # ~100k draws
    wins = int(np.sum(dataset.y > 0))
    p = stats.binomtest(wins, dataset.m, 0.5).pvalue
    assert p > 0.01


def test_conditional_frequencies_match_link():
    """Response frequencies for each fixed (user, pair) are consistent with the
    link probability (exact binomial test, Bonferroni-style threshold)."""
    cfg = pp.SimConfig(n_items=3, dim=4, n_users=4, n_range=(3000, 3000), seed=9)
    dataset, truth = pp.generate(cfg)
    phi = dataset.features.data
    checked = 0
    for u in range(4):
        mask_u = dataset.users == u
        for l in range(3):
            for r in range(3):
                if l == r:
                    continue
                mask = mask_u & (dataset.left == l) & (dataset.right == r)
                n = int(mask.sum())
                if n < 200:
                    continue
                pred = (phi[l] - phi[r]) @ (truth.eta + truth.xi[u]) + truth.gamma[u]
                p = float(pp.response_probability("bt", np.array([pred]))[0])
                wins = int(np.sum(dataset.y[mask] > 0))
                assert stats.binomtest(wins, n, p).pvalue > 1e-4
                checked += 1
    assert checked >= 10


@pytest.mark.parametrize("family", ["bt", "tm"])
def test_link_symmetry(family):
    t = np.linspace(-6, 6, 31)
    psi = pp.response_probability(family, t)
    psi_neg = pp.response_probability(family, -t)
    np.testing.assert_allclose(psi_neg, 1.0 - psi, atol=1e-12)


def test_linear_family_gives_real_outcomes():
    dataset, truth = pp.generate(pp.SimConfig(family="linear", n_users=10, seed=3))
    assert not dataset.is_binary


def test_pairs_are_distinct_and_cover():
    dataset, _ = pp.generate(pp.SimConfig(seed=1))
    assert np.all(dataset.left != dataset.right)
    # ordered pairs appear in both orientations somewhere in a dataset this size
    pairs = set(zip(dataset.left.tolist(), dataset.right.tolist()))
    flipped = {(b, a) for a, b in pairs}
    assert len(pairs & flipped) > 0


def test_config_validation():
    with pytest.raises(pp.PrefpathError):
        pp.SimConfig(p_common_nonzero=1.5)
    with pytest.raises(pp.PrefpathError):
        pp.SimConfig(n_range=(10, 5))
