import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from dpsource.domain import ValidationError
from dpsource.spectral import (SpectralParams, gamma_mode, gamma_pareto_update, pareto_density,
                               pareto_logpdf, pareto_quantile, pareto_sample, sample_eta)


def test_density_closed_forms():
    assert pareto_density(1.0, 1.0, 2.5) == pytest.approx(2.5)
    assert pareto_density(2.0, 1.0, 1.0) == pytest.approx(0.25)
    assert pareto_density(0.5, 1.0, 1.0) == 0.0
    assert pareto_logpdf(3.0, 1.0, 1.5) == pytest.approx(math.log(pareto_density(3.0, 1.0, 1.5)))


@pytest.mark.parametrize("eta", [0.3, 1.0, 2.7])
def test_density_integrates_to_one(eta):
    body, _ = integrate.quad(lambda e: pareto_density(e, 1.0, eta), 1.0, 100.0, limit=200,
                             epsabs=1e-13, epsrel=1e-13)
    tail = 100.0 ** (-eta)
    assert body + tail == pytest.approx(1.0, abs=1e-8)


def test_response_hook_is_applied():
    assert pareto_density(2.0, 1.0, 1.0, response=lambda e: 2 * e) == pytest.approx(1 / 16)


def test_quantile_and_sampling():
    assert pareto_quantile(1.0, 2.0, 3.0) == 2.0
    rng = np.random.default_rng(0)
    x = pareto_sample(1.0, 2.0, rng, size=100_000)
    assert x.min() >= 1.0
    assert stats.kstest(x, lambda e: 1 - e ** -2.0).statistic < 0.01
    med = 2 ** 0.5
    se = 1.0 / (2 * pareto_density(med, 1.0, 2.0) * np.sqrt(len(x)))  # asymptotic median sd
    assert abs(np.median(x) - med) < 4 * se


def test_conjugate_update():
    assert gamma_pareto_update(3.196, 2.196, [], 1.0) == (3.196, 2.196)
    a, b = gamma_pareto_update(3.196, 2.196, [math.e], 1.0)
    assert a == pytest.approx(4.196) and b == pytest.approx(3.196)
    with pytest.raises(ValidationError):
        gamma_pareto_update(1, 1, [0.5], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1.0, 1e3), max_size=15), st.lists(st.floats(1.0, 1e3), max_size=15))
def test_update_is_associative(d1, d2):
    a1, b1 = gamma_pareto_update(*gamma_pareto_update(2.0, 1.0, d1, 1.0), d2, 1.0)
    a2, b2 = gamma_pareto_update(2.0, 1.0, d1 + d2, 1.0)
    assert a1 == a2 and b1 == pytest.approx(b2, rel=1e-12, abs=1e-12)


def test_prior_mode():
    assert gamma_mode(3.196, 2.196) == pytest.approx(1.0, abs=1e-12)


def test_posterior_recovers_shape():
    rng = np.random.default_rng(3)
    e = pareto_sample(1.0, 1.5, rng, size=200)
    a, b = gamma_pareto_update(3.196, 2.196, e, 1.0)
    assert abs(a / b - 1.5) < 3 * math.sqrt(a) / b


def test_eta_draws_positive():
    rng = np.random.default_rng(4)
    assert all(sample_eta(1.2, 0.5, rng) > 0 for _ in range(1000))


def test_params_validated():
    with pytest.raises(ValidationError):
        SpectralParams(0.0, 1.0, 1.0)
