"""B-spline densities for the diffuse background: basis recursion, bivariate
kernel, knot-variance smoothness floor, knot prior and the knot full-conditional
rejection sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .domain import MapBounds, ValidationError

ORDER = 4
N_KNOTS = ORDER + 1
MAX_REJECTIONS = 10 ** 5
PRIOR_REDRAW_ATTEMPTS = 10 ** 4
# envelope grid: a coarse pass refined around its best cell, matching the
# resolution of a uniform grid of ENVELOPE_COARSE * ENVELOPE_FINE points
ENVELOPE_COARSE = 32
ENVELOPE_FINE = 16


class EmptySupportError(RuntimeError):
    """The support interval of a knot full conditional is empty."""


class RejectionLimitError(RuntimeError):
    """Too many consecutive rejections in the knot sampler."""


def _check_knots(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or len(tau) < 2:
        raise ValidationError("need at least two knots")
    if np.any(np.diff(tau) <= 0):
        raise ValidationError(f"knots must be strictly ascending, got {tau.tolist()}")
    return tau


def _basis_rec(m, tau, x):
    if m == 1:
        return ((x >= tau[0]) & (x < tau[1])).astype(float)
    left = (x - tau[0]) / (tau[m - 1] - tau[0]) * _basis_rec(m - 1, tau[:-1], x)
    right = (tau[m] - x) / (tau[m] - tau[1]) * _basis_rec(m - 1, tau[1:], x)
    return left + right


def bspline_basis(m: int, tau, x):
    """Order-``m`` B-spline on knots ``tau`` (``m + 1`` values) by recursion.

    Zero outside ``[tau[0], tau[m])``; the order-1 case is the indicator of
    that half-open interval.
    """
    if m < 1:
        raise ValidationError("order must be >= 1")
    tau = _check_knots(tau)
    if len(tau) != m + 1:
        raise ValidationError(f"order {m} needs {m + 1} knots, got {len(tau)}")
    x = np.asarray(x, dtype=float)
    out = _basis_rec(m, tau, x)
    return out if out.ndim else float(out)


def normalized_bspline_density(m: int, tau, x):
    """``m / (tau[m] - tau[0])`` times the basis: a probability density."""
    tau = _check_knots(tau)
    return m * bspline_basis(m, tau, x) / (tau[-1] - tau[0])


def knot_variance(tau, m: int | None = None) -> float:
    """Variance of the normalised order-``m`` B-spline density.

    ``sum_{p<q} (tau_p - tau_q)^2 / ((m + 1)^2 (m + 2))``.
    """
    tau = np.asarray(tau, dtype=float)
    if m is None:
        m = len(tau) - 1
    if len(tau) != m + 1:
        raise ValidationError(f"order {m} needs {m + 1} knots")
    diff = tau[:, None] - tau[None, :]
    return float(np.sum(np.triu(diff ** 2, 1)) / ((m + 1) ** 2 * (m + 2)))


def sample_bspline(tau, rng, size=None):
    """Draw from the normalised B-spline density on knots ``tau``.

    A Dirichlet(1, ..., 1) mixture of the knots has exactly this density, which
    gives an exact sampler for any order.
    """
    tau = _check_knots(tau)
    n = 1 if size is None else size
    w = rng.dirichlet(np.ones(len(tau)), size=n)
    out = w @ tau
    return float(out[0]) if size is None else out


@dataclass(frozen=True)
class BackgroundComponent:
    """One bivariate background kernel: longitude and latitude knot vectors."""

    ell: tuple
    b: tuple

    def __post_init__(self):
        for name in ("ell", "b"):
            t = _check_knots(getattr(self, name))
            if len(t) != N_KNOTS:
                raise ValidationError(f"{name} needs {N_KNOTS} knots")
            object.__setattr__(self, name, tuple(float(v) for v in t))

    @classmethod
    def from_array(cls, theta) -> "BackgroundComponent":
        theta = np.asarray(theta, dtype=float)
        return cls(tuple(theta[:5]), tuple(theta[5:10]))

    def to_array(self) -> np.ndarray:
        return np.array(self.ell + self.b, dtype=float)

    def density(self, x, y):
        return bivariate_kernel(x, y, self)

    def sd(self) -> tuple[float, float]:
        return np.sqrt(knot_variance(self.ell, ORDER)), np.sqrt(knot_variance(self.b, ORDER))

    def sample(self, rng, size=None):
        x = sample_bspline(self.ell, rng, size)
        y = sample_bspline(self.b, rng, size)
        return np.column_stack([x, y]) if size is not None else (x, y)


def bivariate_kernel(x, y, comp: BackgroundComponent):
    """Product of the two order-4 normalised densities."""
    return (normalized_bspline_density(ORDER, comp.ell, x)
            * normalized_bspline_density(ORDER, comp.b, y))


def check_smoothness(comp: BackgroundComponent, c_ell: float, c_b: float) -> bool:
    """True iff both knot standard deviations strictly exceed their floors."""
    sd_l, sd_b = comp.sd()
    return bool(sd_l > c_ell and sd_b > c_b)


def sample_knots_prior(lo: float, hi: float, rng) -> np.ndarray:
    """Nested-uniform knot prior: middle knot uniform on the axis, each outer
    knot uniform between its inner neighbour and the map edge."""
    if not lo < hi:
        raise ValidationError("need lo < hi")
    k3 = rng.uniform(lo, hi)
    k2 = rng.uniform(lo, k3)
    k4 = rng.uniform(k3, hi)
    k1 = rng.uniform(lo, k2)
    k5 = rng.uniform(k4, hi)
    return np.array([k1, k2, k3, k4, k5])


def knot_prior_logpdf(tau, lo: float, hi: float) -> float:
    """Log density of the nested-uniform knot prior (``-inf`` off its support)."""
    k1, k2, k3, k4, k5 = np.asarray(tau, dtype=float)
    if not lo < k1 < k2 < k3 < k4 < k5 < hi:
        return -np.inf
    return -(np.log(hi - lo) + np.log(k3 - lo) + np.log(hi - k3)
             + np.log(k2 - lo) + np.log(hi - k4))


def sample_component_prior(bounds: MapBounds, c_ell: float, c_b: float, rng,
                           max_tries: int = PRIOR_REDRAW_ATTEMPTS) -> BackgroundComponent:
    """Draw from the knot prior restricted to the smoothness constraint."""
    axes = []
    for lo, hi, c in ((bounds.x_min, bounds.x_max, c_ell), (bounds.y_min, bounds.y_max, c_b)):
        for _ in range(max_tries):
            t = sample_knots_prior(lo, hi, rng)
            if np.all(np.diff(t) > 0) and np.sqrt(knot_variance(t, ORDER)) > c:
                axes.append(t)
                break
        else:
            raise RejectionLimitError("smoothness floor too strict for this map")
    return BackgroundComponent(tuple(axes[0]), tuple(axes[1]))


def knot_conditional_bounds(k: int, tau, lo: float, hi: float,
                            data_min: float = np.inf, data_max: float = -np.inf):
    """Support ``(left, right)`` of the full conditional of knot ``k`` (1-based).

    The outer knots must also keep every assigned point inside the support.
    Raises :class:`EmptySupportError` for an empty interval.
    """
    if k not in (1, 2, 3, 4, 5):
        raise ValidationError("knot index must be in 1..5")
    tau = np.asarray(tau, dtype=float)
    left, right = K.knot_bounds(k - 1, tau, 0, lo, hi, data_min, data_max)
    if not right > left:
        raise EmptySupportError(f"empty support ({left}, {right}) for knot {k}")
    return float(left), float(right)


def _weighted_unique(points):
    points = np.asarray(points, dtype=float).reshape(-1)
    if len(points) == 0:
        return np.zeros(0), np.zeros(0)
    xs, ws = np.unique(points, return_counts=True)
    return xs, ws.astype(float)


def knot_log_conditional(k: int, value, tau, points, lo: float, hi: float, c: float):
    """Unnormalised log full conditional of knot ``k`` (1-based), vectorised."""
    xs, ws = _weighted_unique(points)
    t = np.array(tau, dtype=float)
    vals = np.atleast_1d(np.asarray(value, dtype=float))
    work = np.empty(48)
    out = np.array([K.knot_log_conditional(k - 1, v, t, 0, xs, ws, lo, hi, c, work) for v in vals])
    return out if np.ndim(value) else float(out[0])


def sample_knot_full_conditional(k: int, tau, points, lo: float, hi: float, c: float, rng,
                                 diagnostics: dict | None = None) -> float:
    """Rejection draw of knot ``k`` (1-based) given the other knots and the
    coordinates (one axis) of the points assigned to the component.

    Uniform proposals on the support interval are accepted against a grid
    envelope inflated by 1.5; an envelope violation doubles it and restarts.
    """
    t = np.array(tau, dtype=float)
    xs, ws = _weighted_unique(points)
    dmin = xs[0] if len(xs) else np.inf
    dmax = xs[-1] if len(xs) else -np.inf
    knot_conditional_bounds(k, t, lo, hi, dmin, dmax)
    diag = np.zeros(4)
    status = K.sample_knot(rng, k - 1, t, 0, xs, ws, lo, hi, c, dmin, dmax,
                           ENVELOPE_COARSE, ENVELOPE_FINE, MAX_REJECTIONS, diag)
    if diagnostics is not None:
        diagnostics["envelope_violations"] = diagnostics.get("envelope_violations", 0) + int(diag[3])
    if status == 1:
        raise EmptySupportError(f"empty support for knot {k}")
    if status == 2:
        raise RejectionLimitError(f"{MAX_REJECTIONS} consecutive rejections for knot {k}")
    return float(t[k - 1])
