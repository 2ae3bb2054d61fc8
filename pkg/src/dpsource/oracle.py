"""Independent reference computations for the test and verification suites.

Nothing here calls the compiled sampler kernels: integrals use plain
quadrature, B-spline densities use the recursive basis, and small mixture
posteriors are enumerated exhaustively.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import special

from .bspline import knot_prior_logpdf, knot_variance, normalized_bspline_density

MAX_ENUMERATION_EVENTS = 8
MAX_CRP_EVENTS = 10


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

def _nodes_1d(a, b, n, rule, breaks=()):
    """Nodes and weights on [a, b]; ``breaks`` split the interval so that
    piecewise-smooth integrands are handled segment by segment."""
    pts = np.unique(np.r_[a, [t for t in breaks if a < t < b], b])
    xs, ws = [], []
    for lo, hi in zip(pts[:-1], pts[1:]):
        if rule == "midpoint":
            h = (hi - lo) / n
            xs.append(lo + h * (np.arange(n) + 0.5))
            ws.append(np.full(n, h))
        elif rule == "gauss":
            x, w = np.polynomial.legendre.leggauss(n)
            xs.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * w)
        else:
            raise ValueError(f"unknown rule {rule!r}")
    return np.concatenate(xs), np.concatenate(ws)


def quadrature(f, rect, resolution: int = 1024, rule: str = "midpoint",
               x_breaks=(), y_breaks=()) -> float:
    """Integral of a vectorised ``f`` over an interval ``(a, b)`` or a
    rectangle ``(x0, x1, y0, y1)``.

    ``rule="midpoint"`` is the composite midpoint rule with ``resolution``
    cells per axis (error O(h^2)); ``rule="gauss"`` uses ``resolution``
    Gauss-Legendre nodes per segment. Break points split the axes at kinks.
    """
    if len(rect) == 2:
        x, w = _nodes_1d(rect[0], rect[1], resolution, rule, x_breaks)
        return float(np.sum(w * f(x)))
    if len(rect) != 4:
        raise ValueError("rect must be (a, b) or (x0, x1, y0, y1)")
    x, wx = _nodes_1d(rect[0], rect[1], resolution, rule, x_breaks)
    y, wy = _nodes_1d(rect[2], rect[3], resolution, rule, y_breaks)
    total = 0.0
    # row blocks keep memory bounded on fine grids
    step = max(1, 2 ** 22 // max(len(y), 1))
    for s in range(0, len(x), step):
        X, Y = np.meshgrid(x[s:s + step], y, indexing="ij")
        total += float(np.sum(wx[s:s + step, None] * wy[None, :] * f(X, Y)))
    return total


def bspline_moment(tau, power: int, resolution: int = 64) -> float:
    """``E[X**power]`` under the normalised B-spline on ``tau`` (exact up to
    rounding: Gauss-Legendre per knot interval integrates the polynomials)."""
    tau = np.asarray(tau, dtype=float)
    m = len(tau) - 1
    return quadrature(lambda x: x ** power * normalized_bspline_density(m, tau, x),
                      (tau[0], tau[-1]), resolution, "gauss", x_breaks=tau[1:-1])


def bspline_variance_quadrature(tau) -> float:
    m1 = bspline_moment(tau, 1)
    return bspline_moment(tau, 2) - m1 * m1


def knot_conditional_density(k: int, tau, points, lo: float, hi: float, c: float,
                             grid) -> np.ndarray:
    """Unnormalised full conditional of knot ``k`` (1-based) on ``grid``:
    knot prior times the product of the normalised B-spline at ``points``,
    zero where the knots stop ascending or the smoothness floor fails."""
    tau = np.asarray(tau, dtype=float)
    points = np.asarray(points, dtype=float)
    out = np.zeros(len(grid))
    logs = np.full(len(grid), -np.inf)
    for q, v in enumerate(grid):
        t = tau.copy()
        t[k - 1] = v
        lp = knot_prior_logpdf(t, lo, hi)
        if not np.isfinite(lp) or not math.sqrt(knot_variance(t, 4)) > c:
            continue
        d = normalized_bspline_density(4, t, points)
        if np.any(d <= 0):
            continue
        logs[q] = lp + np.sum(np.log(d))
    if np.any(np.isfinite(logs)):
        out = np.exp(logs - np.max(logs[np.isfinite(logs)]))
    return out


# --------------------------------------------------------------------------
# partitions and the Chinese restaurant process
# --------------------------------------------------------------------------

def set_partitions(n: int):
    """All set partitions of ``range(n)`` as restricted-growth label tuples."""
    if n == 0:
        yield ()
        return

    def rec(prefix, top):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for b in range(top + 2):
            yield from rec(prefix + [b], max(top, b))

    yield from rec([0], 0)


def canonical_labels(labels) -> tuple:
    """Relabel blocks by order of first appearance."""
    seen: dict = {}
    return tuple(seen.setdefault(l, len(seen)) for l in labels)


def crp_log_prob(block_sizes, alpha: float) -> float:
    """Log probability of one partition with the given block sizes under CRP(alpha)."""
    sizes = [s for s in block_sizes if s > 0]
    n = sum(sizes)
    if n == 0:
        return 0.0
    return (len(sizes) * math.log(alpha) + special.gammaln(alpha) - special.gammaln(alpha + n)
            + sum(special.gammaln(s) for s in sizes))


def crp_partition_law(n: int, alpha: float) -> dict:
    """Exact CRP(alpha) probabilities of every set partition of ``n`` items."""
    if n > MAX_CRP_EVENTS:
        raise ValueError(f"partition enumeration limited to n <= {MAX_CRP_EVENTS}")
    out = {}
    for p in set_partitions(n):
        out[p] = math.exp(crp_log_prob(np.bincount(p), alpha))
    return out


def crp_expected_clusters(n: int, alpha: float) -> float:
    """``sum_{i=1}^{n} alpha / (alpha + i - 1)``."""
    i = np.arange(1, n + 1)
    return float(np.sum(alpha / (alpha + i - 1)))


def prior_source_count_mc(n: int, lam: float, alpha: float, rng, draws: int = 2000,
                          n_levels: int = 2) -> float:
    """Monte Carlo prior mean number of source clusters among ``n`` events.

    Each draw takes level weights from Dirichlet(lam), the source count from
    the binomial, then seats the source events one by one in a CRP.
    """
    total = 0.0
    for _ in range(draws):
        delta = rng.dirichlet(np.full(n_levels, lam))[0]
        n_s = rng.binomial(n, delta)
        i = np.arange(1, n_s + 1)
        total += np.count_nonzero(rng.random(n_s) < alpha / (alpha + i - 1))
    return total / draws


def prior_source_count_exact(n: int, lam: float, alpha: float, n_levels: int = 2) -> float:
    """Same expectation with the source count summed out exactly
    (beta-binomial), for cross-checking the Monte Carlo."""
    m = np.arange(n + 1)
    a, b = lam, lam * (n_levels - 1)
    logp = (special.gammaln(n + 1) - special.gammaln(m + 1) - special.gammaln(n - m + 1)
            + special.betaln(m + a, n - m + b) - special.betaln(a, b))
    harm = np.concatenate([[0.0], np.cumsum(alpha / (alpha + m[1:] - 1))])
    return float(np.sum(np.exp(logp) * harm))


# --------------------------------------------------------------------------
# exact micro-instance posteriors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CellKernel:
    """Piecewise-constant kernel on an ``ncx`` by ``ncy`` cell grid.

    ``dens[a, c]`` is the density (per unit area) of atom ``a`` in cell ``c``
    (cell index ``u * ncy + v``); ``prior[a]`` is the base-measure mass of
    atom ``a``.
    """

    rect: tuple
    ncx: int
    ncy: int
    dens: np.ndarray
    prior: np.ndarray

    def cell(self, x, y) -> np.ndarray:
        x0, x1, y0, y1 = self.rect
        u = np.clip(((np.asarray(x) - x0) / (x1 - x0) * self.ncx).astype(int), 0, self.ncx - 1)
        v = np.clip(((np.asarray(y) - y0) / (y1 - y0) * self.ncy).astype(int), 0, self.ncy - 1)
        return u * self.ncy + v

    def marginal(self, cells) -> float:
        """Marginal likelihood of a cluster holding events in ``cells``."""
        return float(np.sum(self.prior * np.prod(self.dens[:, list(cells)], axis=1)))

    def conf(self) -> np.ndarray:
        """Flat configuration vector used by the compiled sampler."""
        return np.concatenate([list(self.rect), [self.ncx, self.ncy, len(self.prior)],
                               np.asarray(self.dens, dtype=float).ravel(),
                               np.asarray(self.prior, dtype=float)])


def enumerate_exact_posterior(xy, kernels: list, lam: float, alphas) -> dict:
    """Exact posterior over level labels and within-level partitions.

    Keys are ``(z, labels)`` tuples with within-level cluster labels in
    order of first appearance; values are normalised probabilities.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    if n > MAX_ENUMERATION_EVENTS:
        raise ValueError(f"exact enumeration limited to n <= {MAX_ENUMERATION_EVENTS} events")
    J = len(kernels)
    cells = [k.cell(xy[:, 0], xy[:, 1]) for k in kernels]
    cache: dict = {}
    logs = {}
    for z in itertools.product(range(J), repeat=n):
        z = tuple(z)
        members = [[i for i in range(n) if z[i] == j] for j in range(J)]
        level = sum(special.gammaln(len(m) + lam) - special.gammaln(lam) for m in members)
        per_level = []
        for j, mem in enumerate(members):
            opts = []
            for p in set_partitions(len(mem)):
                blocks = [tuple(mem[q] for q in range(len(mem)) if p[q] == b)
                          for b in range(max(p, default=-1) + 1)]
                lw = crp_log_prob([len(b) for b in blocks], alphas[j])
                for blk in blocks:
                    key = (j, blk)
                    if key not in cache:
                        cache[key] = kernels[j].marginal(cells[j][list(blk)])
                    lw += math.log(cache[key]) if cache[key] > 0 else -math.inf
                opts.append((p, lw))
            per_level.append((mem, opts))
        for combo in itertools.product(*[o for _, o in per_level]):
            lab = [0] * n
            lw = level
            for (mem, _), (p, lwp) in zip(per_level, combo):
                for q, i in enumerate(mem):
                    lab[i] = p[q]
                lw += lwp
            logs[(z, tuple(lab))] = lw
    vals = np.array(list(logs.values()))
    top = np.max(vals[np.isfinite(vals)])
    w = np.exp(vals - top)
    w /= w.sum()
    return dict(zip(logs.keys(), w))


def state_key(z, lab) -> tuple:
    """Canonical ``(z, labels)`` key of a sampler state, matching the enumeration."""
    z = tuple(int(v) for v in z)
    lab = list(lab)
    out = [0] * len(z)
    for j in set(z):
        idx = [i for i in range(len(z)) if z[i] == j]
        can = canonical_labels([lab[i] for i in idx])
        for i, c in zip(idx, can):
            out[i] = c
    return z, tuple(out)


def empirical_state_distribution(model, sweeps: int, seed: int) -> dict:
    """Visit frequencies of ``(z, partition)`` states over ``sweeps`` sweeps."""
    from .sampler import gibbs_sweep, init_state

    state = init_state(model, seed)
    counts: Counter = Counter()
    for _ in range(sweeps):
        gibbs_sweep(model, state)
        counts[state_key(state.z, state.lab)] += 1
    return {k: v / sweeps for k, v in counts.items()}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def cell_model(xy, kernels: list, lam: float, alphas, hs=(5, 5), aux_mode: str = "event"):
    """Sampler model whose levels use the given cell kernels (names
    ``source`` then ``background`` for two levels)."""
    from . import _kernels as K
    from .sampler import BACKGROUND, SOURCE, Level, MixtureModel

    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    names = [SOURCE, BACKGROUND] if len(kernels) == 2 else [f"level{j}" for j in range(len(kernels))]
    levels = [Level(names[j], K.CELL, k.conf(), float(alphas[j]), int(hs[j]), np.zeros((n, 1)),
                    init_param=np.array([float(np.argmax(k.prior))]))
              for j, k in enumerate(kernels)]
    return MixtureModel(levels, xy, np.ones(n), lam=lam, aux_mode=aux_mode)
