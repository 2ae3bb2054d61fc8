"""Pareto energy spectra and their Gamma-conjugate shape updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import ValidationError


@dataclass(frozen=True)
class SpectralParams:
    eta_s: float
    eta_b: float
    e_min: float

    def __post_init__(self):
        if not (self.eta_s > 0 and self.eta_b > 0 and self.e_min > 0):
            raise ValidationError("Pareto shapes and e_min must be positive")


def identity_response(energy):
    """Default detector response hook: observed energy = true energy."""
    return energy


def pareto_density(e, e_min: float, eta: float, response: Callable = identity_response):
    """``eta * e_min**eta / e**(eta + 1)`` for ``e >= e_min``, else 0."""
    if not eta > 0:
        raise ValidationError("eta must be positive")
    e = np.asarray(response(np.asarray(e, dtype=float)), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(e >= e_min, eta * np.exp(eta * np.log(e_min) - (eta + 1) * np.log(e)), 0.0)
    return out if out.ndim else float(out)


def pareto_logpdf(e, e_min: float, eta: float):
    e = np.asarray(e, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(e >= e_min,
                        np.log(eta) + eta * np.log(e_min) - (eta + 1) * np.log(e), -np.inf)


def pareto_quantile(u, e_min: float, eta: float):
    """Inverse survival map ``e_min * u**(-1/eta)``; ``u = 1`` gives ``e_min``."""
    return e_min * np.power(u, -1.0 / eta)


def pareto_sample(e_min: float, eta: float, rng, size=None):
    # 1 - U lies in (0, 1], so the draw never overflows
    u = 1.0 - rng.random(size)
    return pareto_quantile(u, e_min, eta)


def gamma_pareto_update(a: float, b: float, energies, e_min: float) -> tuple[float, float]:
    """Gamma(a, rate b) prior on a Pareto shape -> posterior (a + n, b + sum log(E/e_min))."""
    energies = np.asarray(energies, dtype=float).reshape(-1)
    if np.any(energies < e_min):
        raise ValidationError("energies below e_min")
    return a + len(energies), b + float(np.sum(np.log(energies / e_min)))


def sample_eta(a: float, b: float, rng) -> float:
    """One Gamma(shape a, rate b) draw."""
    return float(rng.gamma(a, 1.0 / b))


def gamma_mode(a: float, b: float) -> float:
    return (a - 1.0) / b if a >= 1 else 0.0
