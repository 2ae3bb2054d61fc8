import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpsource import oracle
from dpsource.bspline import (BackgroundComponent, EmptySupportError, bivariate_kernel,
                              bspline_basis, check_smoothness, knot_conditional_bounds,
                              knot_log_conditional, knot_prior_logpdf, knot_variance,
                              normalized_bspline_density, sample_bspline,
                              sample_component_prior, sample_knot_full_conditional,
                              sample_knots_prior)
from dpsource.domain import MapBounds, ValidationError
from dpsource.verify import KNOT_TEST_POINTS, KNOT_TEST_TAU, random_knots

ascending = st.lists(st.floats(0.05, 3.0), min_size=4, max_size=4).map(
    lambda g: np.concatenate([[0.0], np.cumsum(g)]))


def test_order_one_indicator():
    assert bspline_basis(1, [0, 1], 0.5) == 1.0
    assert bspline_basis(1, [0, 1], 1.5) == 0.0
    assert normalized_bspline_density(1, [0, 1], 0.3) == 1.0


def test_order_two_triangle():
    assert bspline_basis(2, [0, 1, 2], 1.0) == 1.0
    assert bspline_basis(2, [0, 1, 2], 0.5) == 0.5
    assert normalized_bspline_density(2, [0, 1, 2], 1.0) == 1.0
    assert oracle.quadrature(lambda x: normalized_bspline_density(2, [0, 1, 2], x), (0, 2), 16,
                             "gauss", x_breaks=[1]) == pytest.approx(1.0, abs=1e-8)


def test_cardinal_cubic_integral():
    integral = oracle.quadrature(lambda x: bspline_basis(4, [0, 1, 2, 3, 4], x), (0, 4), 2 ** 14)
    assert integral == pytest.approx(1.0, abs=1e-8)


def test_non_ascending_knots_rejected():
    with pytest.raises(ValidationError):
        bspline_basis(2, [0, 2, 1], 0.5)
    with pytest.raises(ValidationError):
        bspline_basis(3, [0, 1, 2], 0.5)


@pytest.mark.parametrize("tau", list(random_knots(np.random.default_rng(11), 20)))
def test_random_cubic_densities_integrate_to_one(tau):
    total = oracle.quadrature(lambda x: normalized_bspline_density(4, tau, x), (tau[0], tau[-1]),
                              16, "gauss", x_breaks=tau[1:-1])
    assert total == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(ascending)
def test_basis_zero_outside_support(tau):
    x = np.array([tau[0] - 1.0, tau[0] - 1e-9, tau[-1], tau[-1] + 1.0])
    assert np.all(bspline_basis(4, tau, x) == 0)
    assert np.all(bspline_basis(4, tau, np.linspace(tau[0], tau[-1], 50)) >= 0)


def test_variance_analytic_cases():
    assert knot_variance([0, 1], 1) == pytest.approx(1 / 12)
    assert knot_variance([0, 1, 2, 3, 4], 4) == pytest.approx(1 / 3)
    assert oracle.bspline_variance_quadrature([0, 1, 2, 3, 4]) == pytest.approx(1 / 3, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(ascending)
def test_variance_matches_quadrature(tau):
    assert knot_variance(tau, 4) == pytest.approx(oracle.bspline_variance_quadrature(tau), abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(ascending, st.floats(0.1, 10))
def test_variance_scales_quadratically(tau, s):
    assert knot_variance(s * tau, 4) == pytest.approx(s * s * knot_variance(tau, 4), rel=1e-12)


def test_bivariate_kernel_support_and_separability():
    comp = BackgroundComponent((0, 1, 2, 3, 4), (-2, -1, 0, 2, 3))
    assert bivariate_kernel(-0.1, 0.0, comp) == 0 and bivariate_kernel(1.0, 3.5, comp) == 0
    x, y = 1.3, 0.4
    f = normalized_bspline_density(4, comp.ell, x)
    g = normalized_bspline_density(4, comp.b, y)
    assert bivariate_kernel(x, y, comp) == pytest.approx(f * g)
    total = oracle.quadrature(lambda a, b: bivariate_kernel(a, b, comp), (0, 4, -2, 3), 8, "gauss",
                              comp.ell[1:-1], comp.b[1:-1])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_smoothness_floor():
    base = np.arange(5.0)
    assert check_smoothness(BackgroundComponent(base, base), 0.0, 0.0)
    tau = base * 0.99 / np.sqrt(knot_variance(base))
    assert not check_smoothness(BackgroundComponent(tau, tau), 1.0, 1.0)
    wide = np.linspace(-5, 5, 5)
    assert np.sqrt(knot_variance(wide)) > 1.0
    assert check_smoothness(BackgroundComponent(wide, wide), 1.0, 1.0)


def test_knot_prior_draws():
    rng = np.random.default_rng(5)
    draws = np.array([sample_knots_prior(-5, 5, rng) for _ in range(100_000)])
    assert np.all(np.diff(draws, axis=1) > 0)
    assert np.all((draws > -5) & (draws < 5))
    assert stats.kstest(draws[:, 2], stats.uniform(-5, 10).cdf).statistic < 0.01


def test_knot_prior_logpdf_formula():
    rng = np.random.default_rng(6)
    t = sample_knots_prior(0, 1, rng)
    lp = knot_prior_logpdf(t, 0, 1)
    manual = -np.log(1) - np.log(t[2]) - np.log(1 - t[2]) - np.log(t[1]) - np.log(1 - t[3])
    assert lp == pytest.approx(manual)
    assert knot_prior_logpdf(t[::-1], 0, 1) == -np.inf


def test_constrained_component_prior():
    rng = np.random.default_rng(7)
    for _ in range(200):
        comp = sample_component_prior(MapBounds.square(5.0), 1.0, 1.0, rng)
        assert check_smoothness(comp, 1.0, 1.0)


def test_conditional_bounds_table():
    tau = np.array([0.1, 0.5, 1.0, 2.0, 3.9])
    assert knot_conditional_bounds(1, tau, 0.0, 5.0, 0.3, 3.0) == (0.0, 0.3)
    assert knot_conditional_bounds(3, [0.2, 1.0, 1.5, 2.0, 3.0], 0, 5) == (1.0, 2.0)
    assert knot_conditional_bounds(5, tau, 0.0, 5.0, 0.3, 4.2) == (4.2, 5.0)
    assert knot_conditional_bounds(2, tau, 0.0, 5.0) == (0.1, 1.0)
    with pytest.raises(EmptySupportError):
        knot_conditional_bounds(1, tau, 0.0, 5.0, 0.0, 3.0)
    with pytest.raises(ValidationError):
        knot_conditional_bounds(6, tau, 0, 5)


def test_no_points_reduces_to_prior():
    tau = KNOT_TEST_TAU
    grid = np.linspace(tau[1] + 1e-3, tau[3] - 1e-3, 40)
    lp = knot_log_conditional(3, grid, tau, [], 0.0, 10.0, 0.0)
    prior = np.array([knot_prior_logpdf(np.r_[tau[:2], v, tau[3:]], 0, 10) for v in grid])
    assert np.allclose(lp - lp[0], prior - prior[0])


def test_log_conditional_matches_oracle_shape():
    tau = KNOT_TEST_TAU
    grid = np.linspace(tau[1] + 1e-3, tau[3] - 1e-3, 60)
    lp = knot_log_conditional(3, grid, tau, KNOT_TEST_POINTS, 0.0, 10.0, 1.0)
    ref = oracle.knot_conditional_density(3, tau, KNOT_TEST_POINTS, 0.0, 10.0, 1.0, grid)
    ok = ref > 0
    assert np.array_equal(np.isfinite(lp), ok)
    assert np.allclose(np.exp(lp[ok] - lp[ok].max()), ref[ok] / ref[ok].max(), rtol=1e-9)


def test_knot_sampler_chi_square():
    rng = np.random.default_rng(8)
    tau = KNOT_TEST_TAU
    grid = np.linspace(tau[1], tau[3], 20_001)
    dens = oracle.knot_conditional_density(3, tau, KNOT_TEST_POINTS, 0.0, 10.0, 1.0, grid)
    cdf = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    edges = np.interp(np.linspace(0, 1, 21), cdf / cdf[-1], grid)
    draws = [sample_knot_full_conditional(3, tau, KNOT_TEST_POINTS, 0.0, 10.0, 1.0, rng)
             for _ in range(10_000)]
    obs = np.histogram(draws, bins=edges)[0]
    assert stats.chisquare(obs).pvalue > 0.01


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_knot_draws_keep_order_and_floor(k):
    rng = np.random.default_rng(k)
    tau = KNOT_TEST_TAU.copy()
    for _ in range(200):
        tau[k - 1] = sample_knot_full_conditional(k, tau, KNOT_TEST_POINTS, 0.0, 10.0, 1.0, rng)
        assert np.all(np.diff(tau) > 0)
        assert np.sqrt(knot_variance(tau)) > 1.0
        assert tau[0] <= KNOT_TEST_POINTS.min() and tau[-1] >= KNOT_TEST_POINTS.max()


def test_bspline_sampler_matches_density():
    rng = np.random.default_rng(9)
    tau = np.array([0.0, 0.3, 1.7, 2.0, 4.0])
    x = sample_bspline(tau, rng, size=50_000)
    grid = np.linspace(0, 4, 4001)
    cdf = np.cumsum(normalized_bspline_density(4, tau, grid)) * (grid[1] - grid[0])
    assert stats.kstest(x, lambda q: np.interp(q, grid, cdf / cdf[-1])).statistic < 0.01
