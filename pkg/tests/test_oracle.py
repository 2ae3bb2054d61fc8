import math

import numpy as np
import pytest

from dpsource import oracle
from dpsource.bspline import normalized_bspline_density
from dpsource.verify import micro_instance

RECT = (0.0, 1.0, 0.0, 1.0)


def flat_kernel(dens=(1.0, 1.0, 1.0, 1.0)):
    return oracle.CellKernel(RECT, 2, 2, np.array([dens], dtype=float), np.array([1.0]))


def test_single_event_splits_by_likelihood():
    src = oracle.CellKernel(RECT, 2, 2, np.array([[3.0, 0.4, 0.3, 0.3]]), np.array([1.0]))
    post = oracle.enumerate_exact_posterior([[0.2, 0.2]], [src, flat_kernel()], 1.0, [2.0, 1.5])
    assert post[((0,), (0,))] == pytest.approx(3.0 / 4.0, abs=1e-12)
    assert post[((1,), (0,))] == pytest.approx(1.0 / 4.0, abs=1e-12)


def test_flat_kernels_give_crp_within_level():
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 1, size=(5, 2))
    alpha = 2.0
    post = oracle.enumerate_exact_posterior(xy, [flat_kernel(), flat_kernel()], 1.0, [alpha, 0.5])
    all_src = {lab: p for (z, lab), p in post.items() if z == (0,) * 5}
    total = sum(all_src.values())
    law = oracle.crp_partition_law(5, alpha)
    assert len(all_src) == len(law) == 52
    for part, p in law.items():
        assert all_src[part] / total == pytest.approx(p, abs=1e-12)


def test_enumeration_sums_to_one():
    xy, kernels, lam, alphas = micro_instance()
    post = oracle.enumerate_exact_posterior(xy, kernels, lam, alphas)
    assert sum(post.values()) == pytest.approx(1.0, abs=1e-12)


def test_enumeration_guard():
    with pytest.raises(ValueError, match="n <= 8"):
        oracle.enumerate_exact_posterior(np.zeros((9, 2)), [flat_kernel()], 1.0, [1.0])
    with pytest.raises(ValueError):
        oracle.crp_partition_law(11, 1.0)


def test_quadrature_basics():
    assert oracle.quadrature(lambda x, y: np.ones_like(x), RECT, 7) == pytest.approx(1.0, abs=1e-14)
    assert oracle.quadrature(lambda x: x ** 2, (0.0, 1.0), 4, "gauss") == pytest.approx(1 / 3, abs=1e-15)
    assert oracle.quadrature(lambda x: x ** 2, (0.0, 1.0), 1024) == pytest.approx(1 / 3, abs=1e-6)


def test_quadrature_of_cubic_bspline():
    tau = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    val = oracle.quadrature(lambda x: normalized_bspline_density(4, tau, x), (0.0, 4.0), 2 ** 14)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_bspline_moments():
    tau = [0.0, 1.0, 2.0, 3.0, 4.0]
    assert oracle.bspline_moment(tau, 1) == pytest.approx(2.0, abs=1e-12)
    assert oracle.bspline_variance_quadrature(tau) == pytest.approx(1 / 3, abs=1e-12)


def test_set_partition_counts_are_bell_numbers():
    assert [sum(1 for _ in oracle.set_partitions(n)) for n in range(7)] == [1, 1, 2, 5, 15, 52, 203]


def test_crp_single_item_and_harmonic_sum():
    assert oracle.crp_partition_law(1, 0.7) == {(0,): pytest.approx(1.0)}
    for n in range(1, 9):
        for alpha in (0.3, 1.0, 4.0):
            law = oracle.crp_partition_law(n, alpha)
            assert sum(law.values()) == pytest.approx(1.0, abs=1e-12)
            ek = sum(p * (max(part) + 1) for part, p in law.items())
            assert ek == pytest.approx(oracle.crp_expected_clusters(n, alpha), abs=1e-12)


def test_prior_source_count():
    exact = oracle.prior_source_count_exact(10_000, 1.0, 2.0)
    mc = oracle.prior_source_count_mc(10_000, 1.0, 2.0, np.random.default_rng(5), draws=2000)
    assert abs(mc - 16.0) < 1.0
    assert abs(mc - exact) < 1.0


def test_prior_source_count_small_exact():
    # n = 1: the single event is a source with probability 1/2 under a flat Dirichlet
    assert oracle.prior_source_count_exact(1, 1.0, 2.0) == pytest.approx(0.5, abs=1e-12)
    # n = 2, lam = 1: source count uniform on {0, 1, 2}; two sources form 1 + a/(a+1) clusters
    assert oracle.prior_source_count_exact(2, 1.0, 2.0) == pytest.approx(
        (0 + 1 + (1 + 2 / 3)) / 3, abs=1e-12)


def test_total_variation():
    assert oracle.total_variation({"a": 1.0}, {"b": 1.0}) == 1.0
    assert oracle.total_variation({"a": 0.5, "b": 0.5}, {"a": 0.5, "b": 0.5}) == 0.0


def test_state_key_canonicalises_within_level():
    assert oracle.state_key([0, 1, 0, 1], [7, 3, 2, 3]) == ((0, 1, 0, 1), (0, 0, 1, 0))


def test_crp_log_prob_matches_sequential_seating():
    alpha = 1.3
    # partition {0,1},{2}: 1 * (1/(1+a)) * (a/(2+a))
    seq = 1.0 * (1 / (1 + alpha)) * (alpha / (2 + alpha))
    assert math.exp(oracle.crp_log_prob([2, 1], alpha)) == pytest.approx(seq, abs=1e-14)
