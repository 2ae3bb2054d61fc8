"""Synthetic skies with known truth: binned Poisson counts from point sources
(PSF x power law x exposure) plus a background template, converted to
photon events at bin centroids and optionally thinned."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import (GridSpec, MapBounds, PhotonEvent, ValidationError, coerce,
                     parse_keyvalue, read_grid)
from .psf import GaussianPsf, read_psf_table

DEFAULT_EXPOSURE = 2.5e11


def default_energy_edges(n_bins: int = 25, log_width: float = 0.1, e_min: float = 1.0) -> np.ndarray:
    """Log10-equispaced energy bin edges; the default spans 1 to 10**2.5 GeV."""
    return e_min * 10.0 ** (log_width * np.arange(n_bins + 1))


def energy_centroids(edges) -> np.ndarray:
    """Geometric mean of each bin's limits."""
    edges = np.asarray(edges, dtype=float)
    return np.sqrt(edges[:-1] * edges[1:])


@dataclass(frozen=True)
class SourceSpec:
    x: float
    y: float
    f0: float
    rho: float

    def __post_init__(self):
        if not self.f0 >= 0:
            raise ValidationError("source amplitude f0 must be >= 0")
        if not self.rho > 0:
            raise ValidationError("source spectral index rho must be > 0")


@dataclass
class SimScenario:
    """Everything needed to draw one synthetic sky.

    ``exposure`` is per energy bin; when omitted it is ``DEFAULT_EXPOSURE``
    times the bin width in GeV, so that a source with index ``rho`` yields an
    energy density proportional to ``E**-rho``.

    The background is either ``background_cube`` (expected counts per
    ``(u, v, z)``) or ``background_map`` (expected counts per pixel summed
    over energy) spread over the bins as a power law of index
    ``background_rho``.
    """

    sources: list[SourceSpec]
    grid: GridSpec
    energy_edges: np.ndarray = field(default_factory=default_energy_edges)
    exposure: np.ndarray | None = None
    background_map: np.ndarray | None = None
    background_cube: np.ndarray | None = None
    background_rho: float = 1.2
    psf: object = field(default_factory=GaussianPsf)
    thin_to: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.energy_edges = np.asarray(self.energy_edges, dtype=float)
        if np.any(np.diff(self.energy_edges) <= 0) or self.energy_edges[0] <= 0:
            raise ValidationError("energy bin edges must be positive and ascending")
        nz = len(self.energy_edges) - 1
        if self.exposure is None:
            self.exposure = DEFAULT_EXPOSURE * np.diff(self.energy_edges)
        self.exposure = np.broadcast_to(np.asarray(self.exposure, dtype=float), (nz,)).copy()
        if np.any(self.exposure < 0):
            raise ValidationError("exposure must be non-negative")
        shape = self.grid.shape
        if self.background_cube is not None:
            self.background_cube = np.asarray(self.background_cube, dtype=float)
            if self.background_cube.shape != shape + (nz,):
                raise ValidationError(f"background cube must have shape {shape + (nz,)}")
            if np.any(self.background_cube < 0):
                raise ValidationError("background template must be non-negative")
        if self.background_map is not None:
            self.background_map = np.asarray(self.background_map, dtype=float)
            if self.background_map.shape != shape:
                raise ValidationError(f"background map must have shape {shape}")
            if np.any(self.background_map < 0):
                raise ValidationError("background template must be non-negative")
        if not self.background_rho > 0:
            raise ValidationError("background_rho must be > 0")

    @property
    def bounds(self) -> MapBounds:
        return self.grid.bounds

    @property
    def n_bins(self) -> int:
        return len(self.energy_edges) - 1

    def background_spectrum(self) -> np.ndarray:
        """Fraction of a 2-D template's counts falling in each energy bin."""
        e = energy_centroids(self.energy_edges)
        w = e ** (-self.background_rho) * np.diff(self.energy_edges)
        return w / w.sum()


def source_expectation(scenario: SimScenario, s: int, u: int, v: int, z: int) -> float:
    """Expected counts of source ``s`` in cell ``(u, v, z)``."""
    src = scenario.sources[s]
    ez = energy_centroids(scenario.energy_edges)[z]
    xc = scenario.grid.x_centers()[u]
    yc = scenario.grid.y_centers()[v]
    dens = float(scenario.psf.density(xc, yc, (src.x, src.y), ez))
    return src.f0 * ez ** (-src.rho) * dens * scenario.grid.pixel_area() * scenario.exposure[z]


def source_cube(scenario: SimScenario, s: int) -> np.ndarray:
    """Expected counts of source ``s`` over the whole ``(u, v, z)`` array.

    The pixel-integrated PSF is the (untruncated) density at the pixel
    centre times the pixel area.
    """
    src = scenario.sources[s]
    ez = energy_centroids(scenario.energy_edges)
    xc = scenario.grid.x_centers()[:, None]
    yc = scenario.grid.y_centers()[None, :]
    area = scenario.grid.pixel_area()
    cube = np.empty(scenario.grid.shape + (len(ez),))
    for z, e in enumerate(ez):
        dens = scenario.psf.density(xc, yc, (src.x, src.y), e)
        cube[:, :, z] = src.f0 * e ** (-src.rho) * dens * area * scenario.exposure[z]
    return cube


def background_expectation(scenario: SimScenario) -> np.ndarray:
    shape = scenario.grid.shape + (scenario.n_bins,)
    if scenario.background_cube is not None:
        return scenario.background_cube
    if scenario.background_map is not None:
        return scenario.background_map[:, :, None] * scenario.background_spectrum()[None, None, :]
    return np.zeros(shape)


@dataclass
class SimulatedSky:
    """Per-component count arrays; component ``k < n_sources`` is source k,
    the last one the background."""

    scenario: SimScenario
    components: list[np.ndarray]

    @property
    def counts(self) -> np.ndarray:
        return np.sum(self.components, axis=0)

    @property
    def origin_names(self) -> list[str]:
        return [f"source_{k}" for k in range(len(self.scenario.sources))] + ["background"]


def simulate_counts(scenario: SimScenario, rng=None) -> SimulatedSky:
    """Independent Poisson draws per cell and per component.

    Summing the component draws gives the Poisson total with the summed mean,
    and keeps each photon's origin.
    """
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    comps = [rng.poisson(source_cube(scenario, s)) for s in range(len(scenario.sources))]
    comps.append(rng.poisson(background_expectation(scenario)))
    return SimulatedSky(scenario, comps)


def counts_to_events(counts: np.ndarray, grid: GridSpec, energy_edges) -> list[PhotonEvent]:
    """One event per count at the cell centroid (geometric-mean energy)."""
    xy, e = _cells_to_arrays(counts, grid, energy_edges)
    return [PhotonEvent(float(a), float(b), float(c)) for (a, b), c in zip(xy, e)]


def _cells_to_arrays(counts, grid, energy_edges):
    counts = np.asarray(counts)
    u, v, z = np.nonzero(counts)
    reps = counts[u, v, z].astype(np.int64)
    xc, yc = grid.x_centers(), grid.y_centers()
    ez = energy_centroids(energy_edges)
    xy = np.column_stack([np.repeat(xc[u], reps), np.repeat(yc[v], reps)])
    return xy, np.repeat(ez[z], reps)


def sky_to_events(sky: SimulatedSky) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Events of all components with their origin index (last = background)."""
    xys, es, origin = [], [], []
    for k, comp in enumerate(sky.components):
        xy, e = _cells_to_arrays(comp, sky.scenario.grid, sky.scenario.energy_edges)
        xys.append(xy)
        es.append(e)
        origin.append(np.full(len(e), k, dtype=np.int64))
    return np.vstack(xys), np.concatenate(es), np.concatenate(origin)


def thin_events(events, target: int, rng, *extra):
    """Uniform subsample of ``target`` events without replacement, original
    order kept. Extra arrays (e.g. truth labels) are subsampled alongside."""
    n = len(events)
    if target > n:
        raise ValidationError(f"cannot thin {n} events to {target}")
    if target < 0:
        raise ValidationError("target must be >= 0")
    idx = np.sort(rng.choice(n, size=target, replace=False))
    picked = events[idx] if isinstance(events, np.ndarray) else [events[i] for i in idx]
    if extra:
        return (picked, *(np.asarray(a)[idx] for a in extra))
    return picked


@dataclass
class SimulationResult:
    xy: np.ndarray
    energy: np.ndarray
    origin: np.ndarray
    origin_names: list[str]
    sky: SimulatedSky

    def events(self) -> list[PhotonEvent]:
        return [PhotonEvent(float(a), float(b), float(c)) for (a, b), c in zip(self.xy, self.energy)]

    def origin_labels(self) -> list[str]:
        return [self.origin_names[k] for k in self.origin]


def simulate(scenario: SimScenario, rng=None) -> SimulationResult:
    """Counts, events and truth labels, thinned if the scenario asks for it."""
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    sky = simulate_counts(scenario, rng)
    xy, e, origin = sky_to_events(sky)
    if scenario.thin_to is not None:
        xy, e, origin = thin_events(xy, scenario.thin_to, rng, e, origin)
    return SimulationResult(xy, e, origin, sky.origin_names, sky)


def flat_background_map(grid: GridSpec, total: float) -> np.ndarray:
    return np.full(grid.shape, total / (grid.n_x * grid.n_y))


# --- scenario files ----------------------------------------------------------

_SCENARIO_KEYS = {
    "x_min": float, "x_max": float, "y_min": float, "y_max": float, "pixel_size": float,
    "e_min": float, "n_energy_bins": int, "log_bin_width": float, "exposure": float,
    "background_template": str, "background_rho": float, "background_total": float,
    "thin_to": int, "seed": int, "psf_sigma_ref": float, "psf_e_ref": float,
    "psf_index": float, "psf_sigma_floor": float, "psf_table": str,
}
_SOURCE_KEYS = {"x": float, "y": float, "f0": float, "rho": float}


def read_scenario(path) -> SimScenario:
    """Load a key-value scenario with ``[[source]]`` blocks.

    A relative ``background_template`` or ``psf_table`` path is resolved
    against the scenario file's directory. Without a template the background
    is flat with ``background_total`` expected counts (default 0).
    """
    path = Path(path)
    top, blocks = parse_keyvalue(path.read_text(encoding="utf-8"), str(path))
    vals = {}
    for key, raw in top.items():
        if key not in _SCENARIO_KEYS:
            raise ValidationError(f"{path}: unknown scenario key '{key}'")
        vals[key] = coerce(raw, _SCENARIO_KEYS[key], key)
    sources = []
    for b in blocks:
        if b["__block__"] != "source":
            raise ValidationError(f"{path}: unknown block [[{b['__block__']}]]")
        kv = {}
        for key, raw in b.items():
            if key == "__block__":
                continue
            if key not in _SOURCE_KEYS:
                raise ValidationError(f"{path}: unknown source key '{key}'")
            kv[key] = coerce(raw, _SOURCE_KEYS[key], key)
        missing = set(_SOURCE_KEYS) - set(kv)
        if missing:
            raise ValidationError(f"{path}: source block missing {sorted(missing)}")
        sources.append(SourceSpec(**kv))
    edges = default_energy_edges(vals.get("n_energy_bins", 25), vals.get("log_bin_width", 0.1),
                                 vals.get("e_min", 1.0))
    bounds = MapBounds(vals.get("x_min", -5.0), vals.get("x_max", 5.0), vals.get("y_min", -5.0),
                       vals.get("y_max", 5.0), float(edges[0]), float(edges[-1]))
    grid = GridSpec(bounds, vals.get("pixel_size", 0.05))
    bg_map = None
    if vals.get("background_template"):
        tpath = Path(vals["background_template"])
        if not tpath.is_absolute():
            tpath = path.parent / tpath
        if not tpath.exists():
            raise ValidationError(f"{path}: background template not found: {tpath}")
        tgrid = read_grid(tpath)
        if tgrid.spec.shape != grid.shape:
            raise ValidationError(f"{tpath}: template shape {tgrid.spec.shape} != grid {grid.shape}")
        bg_map = tgrid.counts.astype(float)
    elif vals.get("background_total", 0.0) > 0:
        bg_map = flat_background_map(grid, vals["background_total"])
    if vals.get("psf_table"):
        ppath = Path(vals["psf_table"])
        if not ppath.is_absolute():
            ppath = path.parent / ppath
        if not ppath.exists():
            raise ValidationError(f"{path}: PSF table not found: {ppath}")
        psf = read_psf_table(ppath)
    else:
        d = GaussianPsf()
        psf = GaussianPsf(vals.get("psf_sigma_ref", d.sigma_ref), vals.get("psf_e_ref", d.e_ref),
                          vals.get("psf_index", d.index), vals.get("psf_sigma_floor", d.sigma_floor))
    exposure = None
    if "exposure" in vals:
        exposure = vals["exposure"] * np.diff(edges)
    return SimScenario(sources, grid, edges, exposure, background_map=bg_map,
                       background_rho=vals.get("background_rho", 1.2), psf=psf,
                       thin_to=vals.get("thin_to"), seed=vals.get("seed", 0))


def write_truth(path, origin_labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("event_index,origin\n")
        for i, lab in enumerate(origin_labels):
            fh.write(f"{i},{lab}\n")


def read_truth(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "event_index,origin":
        raise ValidationError(f"{path}: expected header event_index,origin")
    out = []
    for k, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        idx, lab = ln.split(",")
        if int(idx) != len(out):
            raise ValidationError(f"{path}: line {k}: event indices must be consecutive")
        out.append(lab.strip())
    return out
