"""Self-checks of the numerical building blocks against the reference oracles.

Each check returns an error measure and a tolerance; it passes when the
measure is strictly below the tolerance times a global scale (the scale
exists so callers can tighten or deliberately break the suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import oracle
from .bspline import knot_variance, normalized_bspline_density, sample_knot_full_conditional
from .domain import MapBounds
from .psf import GaussianPsf
from .spectral import gamma_mode, gamma_pareto_update

PRIOR_SOURCE_COUNT = 16.0


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    scale: float = 1.0

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tolerance * self.scale)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3g} < {self.tolerance * self.scale:.3g}"


def random_knots(rng, n: int, m: int = 4) -> np.ndarray:
    """Ascending knot vectors with gaps of at least 0.05."""
    gaps = 0.05 + rng.exponential(1.0, size=(n, m))
    start = rng.uniform(-3, 3, size=(n, 1))
    return np.hstack([start, start + np.cumsum(gaps, axis=1)])


def check_variance_formula(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    err = 0.0
    for tau in random_knots(rng, 50):
        err = max(err, abs(knot_variance(tau, 4) - oracle.bspline_variance_quadrature(tau)))
    err = max(err, abs(knot_variance([0.0, 1.0], 1) - 1.0 / 12.0))
    err = max(err, abs(knot_variance([0.0, 1.0, 2.0, 3.0, 4.0], 4) - 1.0 / 3.0))
    err = max(err, abs(oracle.bspline_variance_quadrature([0.0, 1.0, 2.0, 3.0, 4.0]) - 1.0 / 3.0))
    return CheckResult("bspline variance formula vs quadrature", err, 1e-8)


def _psf_breaks(centre, s):
    return [centre + k * s for k in range(-10, 11)]


def check_normalization(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    err = 0.0
    for tau in random_knots(rng, 20):
        one = oracle.quadrature(lambda x: normalized_bspline_density(4, tau, x),
                                (tau[0], tau[-1]), 16, "gauss", x_breaks=tau[1:-1])
        err = max(err, abs(one - 1.0))
    for tx, ty in zip(random_knots(rng, 20), random_knots(rng, 20)):
        two = oracle.quadrature(
            lambda x, y: normalized_bspline_density(4, tx, x) * normalized_bspline_density(4, ty, y),
            (tx[0], tx[-1], ty[0], ty[-1]), 8, "gauss", tx[1:-1], ty[1:-1])
        err = max(err, abs(two - 1.0))
    bounds = MapBounds.square(5.0)
    psf = GaussianPsf()
    for _ in range(20):
        mu = rng.uniform(-5, 5, size=2)
        e = float(np.exp(rng.uniform(0, np.log(300))))
        s = float(psf.sigma(e))
        one = oracle.quadrature(lambda x, y: psf.density(x, y, mu, e, bounds), bounds.rect(), 12,
                                "gauss", _psf_breaks(mu[0], s), _psf_breaks(mu[1], s))
        err = max(err, abs(one - 1.0))
    return CheckResult("density normalization", err, 1e-6)


def check_conjugacy() -> CheckResult:
    a, b = 3.196, 2.196
    e = np.array([1.0, math.e, 4.0, 10.0])
    a2, b2 = gamma_pareto_update(a, b, e, 1.0)
    err = max(abs(a2 - (a + 4)), abs(b2 - (b + np.sum(np.log(e)))), abs(gamma_mode(a, b) - 1.0))
    return CheckResult("gamma-pareto conjugacy and prior mode", err, 1e-12)


KNOT_TEST_POINTS = np.round(np.linspace(0.8, 9.1, 20) + 0.3 * np.sin(np.arange(20)), 6)
KNOT_TEST_TAU = np.array([0.5, 2.5, 5.0, 7.5, 9.5])


def check_knot_sampler(draws: int = 10_000, seed: int = 2, bins: int = 20) -> CheckResult:
    """Chi-square of middle-knot draws against the quadrature-normalised
    full conditional over equal-probability bins; value is 0.01 / p."""
    lo, hi, c, k = 0.0, 10.0, 1.0, 3
    tau = KNOT_TEST_TAU
    left, right = tau[1], tau[3]
    grid = np.linspace(left, right, 20_001)
    dens = oracle.knot_conditional_density(k, tau, KNOT_TEST_POINTS, lo, hi, c, grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0, 1, bins + 1), cdf, grid)
    rng = np.random.default_rng(seed)
    vals = np.array([sample_knot_full_conditional(k, tau, KNOT_TEST_POINTS, lo, hi, c, rng)
                     for _ in range(draws)])
    obs = np.histogram(vals, bins=edges)[0]
    p = stats.chisquare(obs, np.full(bins, draws / bins)).pvalue
    return CheckResult("knot sampler chi-square (0.01/p)", 0.01 / max(p, 1e-300), 1.0)


def micro_instance():
    """Five events on the unit square with 2x2-cell kernels for both levels."""
    rect = (0.0, 1.0, 0.0, 1.0)
    src = oracle.CellKernel(rect, 2, 2, np.array([[3.2, 0.4, 0.2, 0.2], [0.2, 0.2, 0.4, 3.2],
                                                  [0.4, 3.2, 0.2, 0.2]]), np.array([0.3, 0.3, 0.4]))
    bg = oracle.CellKernel(rect, 2, 2, np.array([[1.0, 1.0, 1.0, 1.0], [1.6, 0.8, 0.8, 0.8]]),
                           np.array([0.5, 0.5]))
    xy = np.array([[0.2, 0.2], [0.3, 0.1], [0.8, 0.8], [0.2, 0.7], [0.7, 0.3]])
    return xy, [src, bg], 1.0, [2.0, 1.5]


def check_micro_instance(sweeps: int = 200_000, seed: int = 3) -> CheckResult:
    xy, kernels, lam, alphas = micro_instance()
    exact = oracle.enumerate_exact_posterior(xy, kernels, lam, alphas)
    model = oracle.cell_model(xy, kernels, lam, alphas)
    emp = oracle.empirical_state_distribution(model, sweeps, seed)
    return CheckResult("micro-instance total variation", oracle.total_variation(exact, emp), 0.05)


def check_crp(seed: int = 4) -> list[CheckResult]:
    err = 0.0
    for n in range(1, 9):
        for alpha in (0.5, 2.0):
            law = oracle.crp_partition_law(n, alpha)
            ek = sum(p * (max(part) + 1) for part, p in law.items())
            err = max(err, abs(ek - oracle.crp_expected_clusters(n, alpha)),
                      abs(sum(law.values()) - 1.0))
    mc = oracle.prior_source_count_mc(10_000, 1.0, 2.0, np.random.default_rng(seed), draws=2000)
    return [CheckResult("CRP enumeration vs harmonic sum", err, 1e-12),
            CheckResult("prior mean source count vs 16", abs(mc - PRIOR_SOURCE_COUNT), 1.5)]


def run_checks(tolerance_scale: float = 1.0, quick: bool = False) -> list[CheckResult]:
    out = [check_variance_formula(), check_normalization(), check_conjugacy(),
           check_knot_sampler(2000 if quick else 10_000),
           check_micro_instance(100_000 if quick else 200_000), *check_crp()]
    for r in out:
        r.scale = tolerance_scale
    return out
