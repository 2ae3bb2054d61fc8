"""Point-spread functions: map-truncated densities, sampling and containment radii."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import _kernels as K
from .domain import MapBounds, ValidationError

MAX_SAMPLE_ATTEMPTS = 10 ** 6


def _axis_mass(lo, hi, m, s):
    """Mass of N(m, s^2) on [lo, hi], vectorised."""
    return special.ndtr((hi - m) / s) - special.ndtr((lo - m) / s)


@dataclass(frozen=True)
class GaussianPsf:
    """Isotropic Gaussian PSF whose width shrinks with energy.

    ``sigma(E) = sigma_ref * (E / e_ref) ** -index + sigma_floor``.
    """

    sigma_ref: float = 0.6
    e_ref: float = 1.0
    index: float = 0.8
    sigma_floor: float = 0.07

    kind = K.GAUSS_PSF

    def __post_init__(self):
        if not (self.sigma_ref >= 0 and self.e_ref > 0 and self.index >= 0 and self.sigma_floor >= 0):
            raise ValidationError("GaussianPsf parameters must be non-negative (e_ref > 0)")
        if not self.sigma_ref + self.sigma_floor > 0:
            raise ValidationError("GaussianPsf width must be positive")

    def sigma(self, energy):
        energy = np.asarray(energy, dtype=float)
        return self.sigma_ref * (energy / self.e_ref) ** (-self.index) + self.sigma_floor

    def radial_cdf(self, r, energy):
        """Untruncated probability of landing within ``r`` of the true location."""
        s = self.sigma(energy)
        return -np.expm1(-np.square(r) / (2.0 * s * s))

    def density(self, x, y, mu, energy, bounds: MapBounds | None = None):
        """Density per deg^2 at ``(x, y)``; renormalised over ``bounds`` if given."""
        s = self.sigma(energy)
        mx, my = mu
        d2 = (np.asarray(x) - mx) ** 2 + (np.asarray(y) - my) ** 2
        dens = np.exp(-d2 / (2 * s * s)) / (2 * np.pi * s * s)
        if bounds is not None:
            z = (_axis_mass(bounds.x_min, bounds.x_max, mx, s)
                 * _axis_mass(bounds.y_min, bounds.y_max, my, s))
            inside = bounds.contains(np.asarray(x), np.asarray(y))
            dens = np.where(inside, dens / z, 0.0)
        return dens

    def sample(self, mu, energy, bounds: MapBounds, rng, size: int | None = None):
        """Draw photon positions, rejecting anything that falls off the map."""
        n = 1 if size is None else int(size)
        s = float(self.sigma(energy))
        out = np.empty((n, 2))
        filled, attempts = 0, 0
        while filled < n:
            m = max(2 * (n - filled), 16)
            pts = np.asarray(mu, dtype=float) + s * rng.standard_normal((m, 2))
            pts = pts[bounds.contains(pts[:, 0], pts[:, 1])]
            take = min(len(pts), n - filled)
            out[filled:filled + take] = pts[:take]
            filled += take
            attempts += m
            if filled < n and attempts > MAX_SAMPLE_ATTEMPTS * max(n, 1):
                raise RuntimeError("PSF sampling exceeded the attempt guard; is mu on the map?")
        return out[0] if size is None else out

    def containment_radius(self, energy, frac: float) -> float:
        return _containment(lambda r: float(self.radial_cdf(r, energy)), frac,
                            hi=10 * float(self.sigma(energy)))

    def engine_aux(self, energy) -> np.ndarray:
        return np.ascontiguousarray(self.sigma(np.asarray(energy, dtype=float)).reshape(-1, 1))

    def engine_conf(self, bounds: MapBounds) -> np.ndarray:
        return np.array(bounds.rect(), dtype=float)


def _containment(cdf, frac, hi):
    if not 0 < frac < 1:
        raise ValueError("frac must lie strictly between 0 and 1")
    while cdf(hi) < frac:
        hi *= 2
    return optimize.brentq(lambda r: cdf(r) - frac, 0.0, hi, xtol=1e-12, rtol=1e-12)


def _ring_integrals(r, p):
    # exact integral of 2 pi r p(r) on each segment for piecewise-linear p
    ra, rb = r[:-1], r[1:]
    pa, pb = p[..., :-1], p[..., 1:]
    h = rb - ra
    slope = (pb - pa) / h
    # \int_ra^rb r (pa + slope (r - ra)) dr
    i1 = pa * (rb ** 2 - ra ** 2) / 2
    i2 = slope * ((rb ** 3 - ra ** 3) / 3 - ra * (rb ** 2 - ra ** 2) / 2)
    return 2 * np.pi * (i1 + i2)


@dataclass(frozen=True)
class TabulatedPsf:
    """Radial PSF tabulated on an (energy, offset) grid.

    Each energy row is rescaled so that the profile, linear in offset between
    nodes and zero beyond the last node, integrates to one over the plane.
    Rows are interpolated linearly in ``log(E)``.
    """

    energies: np.ndarray
    offsets: np.ndarray
    table: np.ndarray
    row_norm: np.ndarray = field(init=False, repr=False)

    kind = K.TAB_PSF

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        r = np.asarray(self.offsets, dtype=float)
        t = np.asarray(self.table, dtype=float)
        if e.ndim != 1 or r.ndim != 1 or t.shape != (len(e), len(r)):
            raise ValidationError("PSF table shape must be (n_energies, n_offsets)")
        if len(e) < 1 or len(r) < 2:
            raise ValidationError("PSF table needs >= 1 energy and >= 2 offsets")
        if np.any(np.diff(e) <= 0) or np.any(e <= 0):
            raise ValidationError("PSF energies must be positive and ascending")
        if r[0] != 0 or np.any(np.diff(r) <= 0):
            raise ValidationError("PSF offsets must ascend strictly from 0")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ValidationError("PSF densities must be finite and non-negative")
        norm = _ring_integrals(r, t).sum(axis=1)
        if np.any(norm <= 0):
            raise ValidationError("every PSF table row needs positive mass")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "offsets", r)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "row_norm", norm)

    @property
    def r_max(self) -> float:
        return float(self.offsets[-1])

    def profile(self, energy) -> np.ndarray:
        """Normalised radial profile(s) at the offset nodes; shape (..., n_r)."""
        energy = np.asarray(energy, dtype=float)
        lo, hi = self.energies[0], self.energies[-1]
        if np.any((energy < lo * (1 - 1e-12)) | (energy > hi * (1 + 1e-12))):
            raise ValidationError(f"energy outside the PSF table range [{lo}, {hi}] GeV")
        rows = self.table / self.row_norm[:, None]
        if len(self.energies) == 1:
            return np.broadcast_to(rows[0], energy.shape + rows.shape[1:]).copy()
        le = np.log(self.energies)
        x = np.clip(np.log(energy), le[0], le[-1])
        j = np.clip(np.searchsorted(le, x, side="right") - 1, 0, len(le) - 2)
        w = ((x - le[j]) / (le[j + 1] - le[j]))[..., None]
        return (1 - w) * rows[j] + w * rows[j + 1]

    def radial_cdf(self, r, energy):
        prof = self.profile(energy)
        rings = _ring_integrals(self.offsets, prof)
        cum = np.concatenate([[0.0], np.cumsum(rings)])
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for k, rv in enumerate(r):
            if rv >= self.r_max:
                out[k] = 1.0
                continue
            if rv <= 0:
                out[k] = 0.0
                continue
            j = np.searchsorted(self.offsets, rv, side="right") - 1
            sub = np.array([self.offsets[j], rv])
            pv = np.array([prof[j], np.interp(rv, self.offsets, prof)])
            out[k] = cum[j] + _ring_integrals(sub, pv)[0]
        return out if out.size > 1 else float(out[0])

    def truncation_mass(self, mu, energy, bounds: MapBounds) -> float:
        prof = self.profile(energy)
        return K.tab_truncation_mass(float(mu[0]), float(mu[1]), self.offsets, prof,
                                     *bounds.rect())

    def density(self, x, y, mu, energy, bounds: MapBounds | None = None):
        prof = self.profile(energy)
        r = np.hypot(np.asarray(x, dtype=float) - mu[0], np.asarray(y, dtype=float) - mu[1])
        dens = np.interp(r, self.offsets, prof, right=0.0)
        if bounds is not None:
            z = K.tab_truncation_mass(float(mu[0]), float(mu[1]), self.offsets, prof,
                                      *bounds.rect())
            dens = np.where(bounds.contains(np.asarray(x), np.asarray(y)), dens / z, 0.0)
        return dens

    def sample(self, mu, energy, bounds: MapBounds, rng, size: int | None = None):
        n = 1 if size is None else int(size)
        prof = self.profile(energy)
        # inverse radial CDF on a dense grid (exact at nodes, cubic within segments)
        grid = np.concatenate([np.linspace(a, b, 65)[:-1] for a, b in
                               zip(self.offsets[:-1], self.offsets[1:])] + [[self.r_max]])
        cdf = np.concatenate([[0.0], np.cumsum(
            _ring_integrals(grid, np.interp(grid, self.offsets, prof)))])
        out = np.empty((n, 2))
        filled, attempts = 0, 0
        while filled < n:
            m = max(2 * (n - filled), 16)
            rr = np.interp(rng.random(m) * cdf[-1], cdf, grid)
            ang = rng.random(m) * 2 * np.pi
            pts = np.column_stack([mu[0] + rr * np.cos(ang), mu[1] + rr * np.sin(ang)])
            pts = pts[bounds.contains(pts[:, 0], pts[:, 1])]
            take = min(len(pts), n - filled)
            out[filled:filled + take] = pts[:take]
            filled += take
            attempts += m
            if filled < n and attempts > MAX_SAMPLE_ATTEMPTS * max(n, 1):
                raise RuntimeError("PSF sampling exceeded the attempt guard; is mu on the map?")
        return out[0] if size is None else out

    def containment_radius(self, energy, frac: float) -> float:
        return _containment(lambda r: float(self.radial_cdf(r, energy)), frac, hi=self.r_max)

    def engine_aux(self, energy) -> np.ndarray:
        return np.ascontiguousarray(self.profile(np.asarray(energy, dtype=float).reshape(-1)))

    def engine_conf(self, bounds: MapBounds) -> np.ndarray:
        return np.concatenate([bounds.rect(), [len(self.offsets)], self.offsets]).astype(float)


def read_psf_table(path) -> TabulatedPsf:
    """Load ``n_e n_r`` / energies / offsets / ``n_e`` rows of densities."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    try:
        n_e, n_r = int(lines[0][0]), int(lines[0][1])
        energies = np.array(lines[1], dtype=float)
        offsets = np.array(lines[2], dtype=float)
        table = np.array(lines[3:3 + n_e], dtype=float)
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed PSF table ({exc})") from None
    if len(energies) != n_e or len(offsets) != n_r or table.shape != (n_e, n_r) or len(lines) != 3 + n_e:
        raise ValidationError(f"{path}: PSF table dimensions do not match header {n_e} {n_r}")
    return TabulatedPsf(energies, offsets, table)


def write_psf_table(path, psf: TabulatedPsf) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(psf.energies)} {len(psf.offsets)}\n")
        fh.write(" ".join(repr(float(v)) for v in psf.energies) + "\n")
        fh.write(" ".join(repr(float(v)) for v in psf.offsets) + "\n")
        for row in psf.table:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def psf_density(x, y, mu, energy, model, bounds: MapBounds):
    """Map-truncated PSF density (per deg^2) of a photon at ``(x, y)``."""
    return model.density(x, y, mu, energy, bounds)


def psf_sample(mu, energy, model, bounds: MapBounds, rng, size: int | None = None):
    return model.sample(mu, energy, bounds, rng, size)


def containment_radius(energy, model, frac: float) -> float:
    return model.containment_radius(energy, frac)


def default_psf() -> GaussianPsf:
    return GaussianPsf()
