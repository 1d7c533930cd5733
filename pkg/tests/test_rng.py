import numpy as np
import pytest
from scipy.stats import kstest

from ergodic_bem.errors import ContractViolation
from ergodic_bem.rng import (aggregate_increments, block_normals, derive_seed, derive_stream,
                             sample_increment)


def draws(seed, index, n, tau=1.0):
    return np.sqrt(tau) * derive_stream(seed, index).normals(n, 1)[:, 0]


def test_same_pair_gives_identical_sequence():
    np.testing.assert_array_equal(draws(7, 3, 1000), draws(7, 3, 1000))


def test_chunked_draws_equal_one_shot_draws():
    s = derive_stream(11, 0)
    chunks = np.concatenate([s.normals(n, 2) for n in (1, 7, 100, 892)])
    np.testing.assert_array_equal(chunks, derive_stream(11, 0).normals(1000, 2))


def test_neighbouring_streams_are_uncorrelated():
    a, b = draws(5, 0, 100_000), draws(5, 1, 100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


def test_distinct_master_seeds_differ():
    assert not np.array_equal(draws(1, 0, 10), draws(2, 0, 10))


def test_increment_variance_matches_tau():
    x = draws(3, 0, 1_000_000, tau=0.01)
    assert 0.01 * 0.99 <= x.var() <= 0.01 * 1.01


def test_sample_increment_moments():
    s = derive_stream(13, 0)
    x = np.array([sample_increment(s, 1.0, 1)[0] for _ in range(2000)])
    assert x.shape == (2000,)
    big = draws(13, 1, 1_000_000)
    assert abs(big.mean()) < 0.004
    assert abs(np.mean(big ** 4) - 3.0) < 0.05


def test_sample_increment_zero_tau_is_zero():
    np.testing.assert_array_equal(sample_increment(derive_stream(0, 0), 0.0, 3), np.zeros(3))


def test_sample_increment_rejects_negative_tau():
    with pytest.raises(ContractViolation):
        sample_increment(derive_stream(0, 0), -1.0, 1)


def test_ks_of_scaled_increments():
    assert kstest(draws(17, 4, 100_000), "norm").statistic < 0.006


def test_aggregate_identity_and_pairs():
    a, b, c, d = 1.0, 2.0, 4.0, 8.0
    np.testing.assert_array_equal(aggregate_increments([[a], [b], [c], [d]], 1), [[a], [b], [c], [d]])
    np.testing.assert_array_equal(aggregate_increments([[a], [b], [c], [d]], 2), [[a + b], [c + d]])


def test_aggregate_rejects_indivisible_length():
    with pytest.raises(ContractViolation):
        aggregate_increments(np.zeros((5, 1)), 2)
    with pytest.raises(ContractViolation):
        aggregate_increments(np.zeros((4, 1)), 0)


def test_aggregated_variance_is_additive():
    fine = draws(19, 0, 1_000_000, tau=0.001)[:, None]
    coarse = aggregate_increments(fine, 10)
    assert coarse.shape == (100_000, 1)
    assert 0.01 * 0.98 <= coarse.var() <= 0.01 * 1.02


def test_block_normals_layout_follows_streams():
    streams = [derive_stream(23, i) for i in range(3)]
    z = block_normals(streams, 4, 2)
    assert z.shape == (4, 3, 2)
    np.testing.assert_array_equal(z[:, 1, :], derive_stream(23, 1).normals(4, 2))


def test_derive_seed_is_deterministic_and_tag_sensitive():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert 0 <= derive_seed(99, 1) < 2 ** 63
