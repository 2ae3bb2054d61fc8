"""Region-based summary of the source-location draws.

Pipeline: pool the retained draws of every chain on a pixel grid, pick the
strongest local maxima as region seeds, grow each seed greedily until the
region holds a source in a target fraction of iterations, then relabel the
draws by region and summarise presence, multiplicity, location and relative
intensity. The posterior mean background map is a Monte Carlo average over
the recorded background components.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .domain import GridSpec, PixelGrid, ValidationError
from .sampler import Trace

DEFAULT_BURN_IN = 0.75
DEFAULT_P_STAR = 0.95
DEFAULT_D_R = 3
REPORT_COLUMNS = ["region_id", "n_pixels", "presence_prob", "p_multi", "intensity_mean",
                  "hpd68_lo", "hpd68_hi", "hpd95_lo", "hpd95_hi", "centroid_x", "centroid_y"]


@dataclass
class PooledDraws:
    """Source-location draws of all retained iterations, one row per draw.

    ``iteration`` numbers the pooled iterations ``0..n_iter-1`` across chains;
    ``intensity`` is the level weight times the cluster weight of the draw
    (NaN when weights were not recorded).
    """

    spec: GridSpec
    n_iter: int
    iteration: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    intensity: np.ndarray
    k_s: np.ndarray

    def grid(self) -> PixelGrid:
        counts = np.zeros(self.spec.shape, dtype=np.int64)
        np.add.at(counts, (self.u, self.v), 1)
        return PixelGrid(self.spec, counts)


@dataclass
class IntensitySummary:
    available: bool
    n: int = 0
    mean: float = np.nan
    hpd68: tuple[float, float] = (np.nan, np.nan)
    hpd95: tuple[float, float] = (np.nan, np.nan)


@dataclass
class Region:
    id: int
    seed: tuple[int, int]
    pixels: list[tuple[int, int]]
    presence_prob: float
    count_dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    location_posterior: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intensity: IntensitySummary = field(default_factory=lambda: IntensitySummary(False))
    centroid: tuple[float, float] = (np.nan, np.nan)

    @property
    def p_multi(self) -> float:
        """Probability of two or more sources given at least one."""
        return float(self.count_dist[1:].sum()) if len(self.count_dist) else np.nan


@dataclass
class RegionReport:
    regions: list[Region]
    k_star: int
    shortfall: bool
    n_iter: int


def retained(traces, burn_in: float = DEFAULT_BURN_IN) -> list[Trace]:
    if isinstance(traces, Trace):
        traces = [traces]
    if not 0.0 <= burn_in < 1.0:
        raise ValidationError("burn-in fraction must be in [0, 1)")
    return [t.after_burn_in(burn_in) for t in traces]


def collect_draws(traces, spec: GridSpec, burn_in: float = DEFAULT_BURN_IN) -> PooledDraws:
    """Pool the source-location draws of all chains after burn-in."""
    kept = retained(traces, burn_in)
    its, xs, ys, ws, ks = [], [], [], [], []
    offset = 0
    for tr in kept:
        sw = tr.source_weights() if tr.weights else []
        for q, mu in enumerate(tr.mus):
            mu = np.asarray(mu, dtype=float).reshape(-1, 2)
            its.append(np.full(len(mu), offset + q, dtype=np.int64))
            xs.append(mu[:, 0])
            ys.append(mu[:, 1])
            ws.append(np.asarray(sw[q], dtype=float) if sw else np.full(len(mu), np.nan))
        ks.append(tr.k_s)
        offset += len(tr)
    if offset == 0:
        raise ValidationError("no retained iterations")
    cat = (lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt))
    x, y = cat(xs, float), cat(ys, float)
    u, v = spec.pixel_index(x, y)
    return PooledDraws(spec, offset, cat(its, np.int64), x, y, np.asarray(u), np.asarray(v),
                       cat(ws, float), np.concatenate(ks).astype(int))


def pool_draws(traces, spec: GridSpec, burn_in: float = DEFAULT_BURN_IN) -> PixelGrid:
    """Grid of location-draw counts over all chains after burn-in."""
    return collect_draws(traces, spec, burn_in).grid()


def k_star(k_s) -> int:
    """Most frequent number of source clusters (smallest on ties)."""
    k_s = np.asarray(k_s, dtype=int)
    if len(k_s) == 0:
        raise ValidationError("no iterations")
    return int(np.argmax(np.bincount(k_s)))


def _neighbourhood_sum(c: np.ndarray) -> np.ndarray:
    p = np.pad(c, 1)
    n_x, n_y = c.shape
    return sum(p[1 + du:1 + du + n_x, 1 + dv:1 + dv + n_y]
               for du in (-1, 0, 1) for dv in (-1, 0, 1))


def find_candidate_regions(grid: PixelGrid, k_star: int) -> tuple[list[tuple[int, int]], bool]:
    """The ``k_star`` strongest local maxima of the pooled grid.

    Pixels are ranked by (count, 3x3 neighbourhood sum, lower row-major
    index); a local maximum outranks all of its 8 neighbours. Returns the
    seeds in rank order and a flag set when fewer than ``k_star`` exist.
    """
    c = np.asarray(grid.counts)
    if c.sum() <= 0:
        raise ValidationError("pooled grid is empty")
    n_x, n_y = c.shape
    nsum = _neighbourhood_sum(c)
    # row-major over the file layout (rows of constant v)
    index = np.arange(n_y)[None, :] * n_x + np.arange(n_x)[:, None]

    def key(u, v):
        return (c[u, v], nsum[u, v], -index[u, v])

    seeds = []
    for u, v in zip(*np.nonzero(c)):
        k0 = key(u, v)
        if all(key(a, b) < k0
               for a in range(max(u - 1, 0), min(u + 2, n_x))
               for b in range(max(v - 1, 0), min(v + 2, n_y)) if (a, b) != (u, v)):
            seeds.append((k0, (int(u), int(v))))
    seeds.sort(reverse=True)
    chosen = [s for _, s in seeds[:k_star]]
    return chosen, len(chosen) < k_star


def _pixel_iterations(draws: PooledDraws) -> dict:
    out: dict = {}
    order = np.lexsort((draws.iteration, draws.v, draws.u))
    u, v, it = draws.u[order], draws.v[order], draws.iteration[order]
    if len(u) == 0:
        return out
    brk = np.flatnonzero((np.diff(u) != 0) | (np.diff(v) != 0)) + 1
    for a, b in zip(np.r_[0, brk], np.r_[brk, len(u)]):
        out[(int(u[a]), int(v[a]))] = np.unique(it[a:b])
    return out


def region_presence_probability(pixels, draws: PooledDraws) -> float:
    """Fraction of iterations with at least one location draw in ``pixels``."""
    if draws.n_iter == 0:
        return 0.0
    pix = set(map(tuple, pixels))
    if not pix:
        return 0.0
    inside = np.array([(a, b) in pix for a, b in zip(draws.u.tolist(), draws.v.tolist())],
                      dtype=bool)
    return len(np.unique(draws.iteration[inside])) / draws.n_iter


def _window(seed, d_r, shape):
    lo = (d_r - 1) // 2
    hi = d_r // 2
    return {(a, b) for a in range(seed[0] - lo, seed[0] + hi + 1)
            for b in range(seed[1] - lo, seed[1] + hi + 1)
            if 0 <= a < shape[0] and 0 <= b < shape[1]}


def grow_region(seed, draws: PooledDraws, p_star: float = DEFAULT_P_STAR, d_r: int = DEFAULT_D_R,
                owned=frozenset(), pixel_iters: dict | None = None) -> tuple[list, float]:
    """Greedily extend a seed pixel by 4-adjacent pixels of its ``d_r`` window.

    Each step adds the pixel with the largest presence gain (then the most
    draws, then the lower row-major index) until the presence probability
    reaches ``p_star`` or no pixel can be added. Pixels in ``owned`` belong to
    other regions and are never taken. Returns the pixels and the presence.
    """
    if pixel_iters is None:
        pixel_iters = _pixel_iterations(draws)
    seed = (int(seed[0]), int(seed[1]))
    shape = draws.spec.shape
    n_x = shape[0]
    covered = np.zeros(max(draws.n_iter, 1), dtype=bool)
    empty = np.zeros(0, dtype=np.int64)
    covered[pixel_iters.get(seed, empty)] = True
    pixels = [seed]
    window = _window(seed, d_r, shape) - set(owned) - {seed}
    n_draws = {}
    for p in window:
        n_draws[p] = int(np.sum((draws.u == p[0]) & (draws.v == p[1])))
    while covered.sum() / draws.n_iter < p_star:
        frontier = [p for p in window
                    if any((p[0] + du, p[1] + dv) in pixels
                           for du, dv in ((1, 0), (-1, 0), (0, 1), (0, -1)))]
        if not frontier:
            break
        best = max(frontier, key=lambda p: (int(np.sum(~covered[pixel_iters.get(p, empty)])),
                                            n_draws[p], -(p[1] * n_x + p[0])))
        covered[pixel_iters.get(best, empty)] = True
        pixels.append(best)
        window.discard(best)
    return pixels, float(covered.sum() / draws.n_iter)


def relabel(draws: PooledDraws, regions: list[Region]) -> np.ndarray:
    """Region id of every draw (0 outside all regions)."""
    owner = {}
    for r in regions:
        for p in r.pixels:
            p = (int(p[0]), int(p[1]))
            if p in owner:
                raise ValidationError(f"regions {owner[p]} and {r.id} overlap at pixel {p}")
            owner[p] = r.id
    return np.array([owner.get((a, b), 0) for a, b in zip(draws.u.tolist(), draws.v.tolist())],
                    dtype=np.int64)


def _per_iteration_counts(region_id: int, labels, draws: PooledDraws) -> np.ndarray:
    return np.bincount(draws.iteration[np.asarray(labels) == region_id], minlength=draws.n_iter)


def conditional_count_distribution(region_id: int, labels, draws: PooledDraws) -> np.ndarray:
    """``P(K = k | K > 0)`` for ``k = 1, 2, ...`` (entry ``k - 1``)."""
    n = _per_iteration_counts(region_id, labels, draws)
    n = n[n > 0]
    if len(n) == 0:
        raise ValidationError(f"region {region_id} never holds a source")
    return np.bincount(n)[1:] / len(n)


def hpd_interval(samples, mass: float) -> tuple[float, float]:
    """Shortest interval holding ``ceil(mass * n)`` of the sorted samples."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    if n == 0:
        raise ValidationError("no samples")
    m = min(max(int(np.ceil(mass * n)), 1), n)
    widths = s[m - 1:] - s[:n - m + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + m - 1])


def summarize_intensity(values) -> IntensitySummary:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if len(values) == 0:
        return IntensitySummary(False)
    return IntensitySummary(True, len(values), float(values.mean()),
                            hpd_interval(values, 0.68), hpd_interval(values, 0.95))


def _single_draws(region_id: int, labels, draws: PooledDraws) -> np.ndarray:
    # indices of draws in iterations where the region holds exactly one cluster
    per_it = _per_iteration_counts(region_id, labels, draws)
    sel = (np.asarray(labels) == region_id) & (per_it[draws.iteration] == 1)
    return np.flatnonzero(sel)


def relative_intensities(regions: list[Region], labels, draws: PooledDraws) -> dict:
    """Relative-intensity summary per region, from iterations where the
    region holds exactly one source cluster."""
    return {r.id: summarize_intensity(draws.intensity[_single_draws(r.id, labels, draws)])
            for r in regions}


def location_posterior(region: Region, labels, draws: PooledDraws) -> np.ndarray:
    """Per-pixel location probabilities given exactly one source inside."""
    idx = _single_draws(region.id, labels, draws)
    pos = {p: q for q, p in enumerate(region.pixels)}
    out = np.zeros(len(region.pixels))
    for a, b in zip(draws.u[idx].tolist(), draws.v[idx].tolist()):
        out[pos[(a, b)]] += 1
    return out / out.sum() if out.sum() > 0 else out


def find_regions(draws: PooledDraws, k_star_value: int | None = None,
                 p_star: float = DEFAULT_P_STAR, d_r: int = DEFAULT_D_R) -> RegionReport:
    """Seeds, growth, relabelling and per-region summaries."""
    if k_star_value is None:
        k_star_value = k_star(draws.k_s)
    grid = draws.grid()
    if k_star_value == 0 or grid.total() == 0:
        return RegionReport([], k_star_value, k_star_value > 0, draws.n_iter)
    seeds, short = find_candidate_regions(grid, k_star_value)
    pixel_iters = _pixel_iterations(draws)
    owned = set(seeds)
    regions = []
    for m, seed in enumerate(seeds, start=1):
        pixels, pres = grow_region(seed, draws, p_star, d_r, owned - {seed}, pixel_iters)
        owned.update(pixels)
        regions.append(Region(m, seed, pixels, pres))
    labels = relabel(draws, regions)
    for r in regions:
        r.count_dist = conditional_count_distribution(r.id, labels, draws)
        r.location_posterior = location_posterior(r, labels, draws)
        idx = _single_draws(r.id, labels, draws)
        if len(idx) == 0:
            idx = np.flatnonzero(labels == r.id)
        r.centroid = (float(draws.x[idx].mean()), float(draws.y[idx].mean()))
        r.intensity = summarize_intensity(draws.intensity[_single_draws(r.id, labels, draws)])
    return RegionReport(regions, k_star_value, short, draws.n_iter)


def analyze(traces, spec: GridSpec, burn_in: float = DEFAULT_BURN_IN,
            p_star: float = DEFAULT_P_STAR, d_r: int = DEFAULT_D_R,
            k_star_value: int | None = None) -> RegionReport:
    return find_regions(collect_draws(traces, spec, burn_in), k_star_value, p_star, d_r)


def write_region_report(path, report: RegionReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in report.regions:
            s = r.intensity
            w.writerow([r.id, len(r.pixels), f"{r.presence_prob:.6g}", f"{r.p_multi:.6g}",
                        f"{s.mean:.6g}", f"{s.hpd68[0]:.6g}", f"{s.hpd68[1]:.6g}",
                        f"{s.hpd95[0]:.6g}", f"{s.hpd95[1]:.6g}",
                        f"{r.centroid[0]:.6g}", f"{r.centroid[1]:.6g}"])


def read_region_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rec = {k: float(v) for k, v in row.items()}
        rec["region_id"] = int(rec["region_id"])
        rec["n_pixels"] = int(rec["n_pixels"])
        out.append(rec)
    return out


def sample_background_photons(comps: np.ndarray, weights: np.ndarray, n: int, rng) -> np.ndarray:
    """``n`` points from the background mixture with the given knot vectors.

    Each point picks a component by weight, then each axis is a Dirichlet(1)
    mixture of that component's knots, an exact draw from the normalised
    order-4 B-spline.
    """
    comps = np.asarray(comps, dtype=float).reshape(-1, 10)
    w = np.asarray(weights, dtype=float)
    which = rng.choice(len(comps), size=n, p=w / w.sum())
    gx = rng.dirichlet(np.ones(5), size=n)
    gy = rng.dirichlet(np.ones(5), size=n)
    x = np.einsum("ij,ij->i", gx, comps[which, :5])
    y = np.einsum("ij,ij->i", gy, comps[which, 5:])
    return np.column_stack([x, y])


def posterior_background_map(traces, spec: GridSpec, rng,
                             burn_in: float = DEFAULT_BURN_IN) -> PixelGrid:
    """Posterior mean background counts per pixel.

    For every retained iteration with recorded components, as many points as
    the iteration's background events are drawn from its background mixture
    (occupied clusters weighted by their recovered weights) and binned; the
    map is the average over iterations.
    """
    kept = retained(traces, burn_in)
    acc = np.zeros(spec.shape)
    n_used = 0
    for tr in kept:
        if not tr.bgs:
            continue
        jb = tr.levels.index("background")
        nb = tr.n_background
        for q, comps in enumerate(tr.bgs):
            n_used += 1
            if nb[q] == 0 or len(comps) == 0:
                continue
            w = tr.bg_counts[q]
            if tr.weights and len(tr.weights[q][1][jb]) == len(comps):
                w = tr.weights[q][1][jb]
            xy = sample_background_photons(comps, w, int(nb[q]), rng)
            u, v = spec.pixel_index(xy[:, 0], xy[:, 1])
            np.add.at(acc, (u, v), 1.0)
    return PixelGrid(spec, acc / n_used if n_used else acc)
