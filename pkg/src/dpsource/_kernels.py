"""Compiled scalar kernels shared by the density modules and the sampler.

Every mixture level carries an integer kernel kind plus a flat float64
``conf`` vector; the layouts are:

* ``GAUSS_PSF``:  ``[x0, x1, y0, y1]``; per-event aux ``[sigma]``; theta ``[mx, my]``
* ``TAB_PSF``:    ``[x0, x1, y0, y1, nr, r_0..r_{nr-1}]``; per-event aux = radial
  profile at the event energy (density per deg^2 at the ``r`` nodes)
* ``BSPLINE``:    ``[x0, x1, y0, y1, c_ell, c_b]``; theta = 5 longitude + 5 latitude knots
* ``CELL``:       ``[x0, x1, y0, y1, ncx, ncy, n_atoms, dens(n_atoms*ncx*ncy), w(n_atoms)]``;
  theta ``[atom]`` (piecewise-constant test kernel)
"""

import math

import numpy as np
from numba import njit

GAUSS_PSF = 0
TAB_PSF = 1
BSPLINE = 2
CELL = 3

NEG_INF = -np.inf
SQRT2 = math.sqrt(2.0)
LOG_SAFETY = math.log(1.5)


# --------------------------------------------------------------------------
# B-splines
# --------------------------------------------------------------------------

@njit(cache=True, inline="always")
def cubic_bspline(t0, t1, t2, t3, t4, x):
    """Order-4 basis on five knots; half-open support ``[t0, t4)``."""
    if x < t0 or x >= t4:
        return 0.0
    a0 = 1.0 if x < t1 else 0.0
    a1 = 1.0 if (t1 <= x < t2) else 0.0
    a2 = 1.0 if (t2 <= x < t3) else 0.0
    a3 = 1.0 if x >= t3 else 0.0
    # order 2
    b0 = (x - t0) / (t1 - t0) * a0 + (t2 - x) / (t2 - t1) * a1
    b1 = (x - t1) / (t2 - t1) * a1 + (t3 - x) / (t3 - t2) * a2
    b2 = (x - t2) / (t3 - t2) * a2 + (t4 - x) / (t4 - t3) * a3
    # order 3
    c0 = (x - t0) / (t2 - t0) * b0 + (t3 - x) / (t3 - t1) * b1
    c1 = (x - t1) / (t3 - t1) * b1 + (t4 - x) / (t4 - t2) * b2
    # order 4
    return (x - t0) / (t3 - t0) * c0 + (t4 - x) / (t4 - t1) * c1


@njit(cache=True)
def cubic_density(t, off, x):
    """Normalised order-4 density with knots ``t[off:off+5]``."""
    t0 = t[off]
    t4 = t[off + 4]
    return 4.0 * cubic_bspline(t0, t[off + 1], t[off + 2], t[off + 3], t4, x) / (t4 - t0)


@njit(cache=True)
def cubic_coeffs_work(t, off, out, ooff, work):
    """Piecewise-cubic form of the normalised order-4 density on ``t[off:off+5]``.

    ``out[ooff + 4 i + p]`` is the coefficient of ``u**p`` on the i-th knot
    interval, with ``u = x - t[off + i]``. ``work`` needs 32 entries.
    """
    norm = 4.0 / (t[off + 4] - t[off])
    for i in range(4):
        ti = t[off + i]
        # work[0:16] current order, work[16:32] next order; row j = 4 j
        for q in range(16):
            work[q] = 0.0
        work[4 * i] = 1.0
        for m in range(2, 5):
            for j in range(5 - m):
                d1 = t[off + j + m - 1] - t[off + j]
                d2 = t[off + j + m] - t[off + j + 1]
                a0 = (ti - t[off + j]) / d1
                a1 = 1.0 / d1
                b0 = (t[off + j + m] - ti) / d2
                b1 = -1.0 / d2
                for p in range(4):
                    v = a0 * work[4 * j + p] + b0 * work[4 * j + 4 + p]
                    if p > 0:
                        v += a1 * work[4 * j + p - 1] + b1 * work[4 * j + 3 + p]
                    work[16 + 4 * j + p] = v
            for q in range(4 * (5 - m)):
                work[q] = work[16 + q]
            for q in range(4 * (5 - m), 16):
                work[q] = 0.0
        for p in range(4):
            out[ooff + 4 * i + p] = norm * work[p]


@njit(cache=True)
def cubic_coeffs(t, off, out, ooff):
    cubic_coeffs_work(t, off, out, ooff, np.empty(32))


@njit(cache=True, inline="always")
def poly_density(t, off, c, coff, x):
    """Evaluate the cached piecewise-cubic density (see :func:`cubic_coeffs`)."""
    if x < t[off] or x >= t[off + 4]:
        return 0.0
    if x < t[off + 2]:
        i = 0 if x < t[off + 1] else 1
    else:
        i = 2 if x < t[off + 3] else 3
    u = x - t[off + i]
    b = coff + 4 * i
    v = c[b] + u * (c[b + 1] + u * (c[b + 2] + u * c[b + 3]))
    return v if v > 0.0 else 0.0


BSPLINE_CACHE = 10
PARAM_DIM = 42


@njit(cache=True)
def refresh_cache(kind, theta):
    """Recompute derived quantities stored after the parameters proper."""
    if kind == BSPLINE:
        cubic_coeffs(theta, 0, theta, BSPLINE_CACHE)
        cubic_coeffs(theta, 5, theta, BSPLINE_CACHE + 16)


@njit(cache=True)
def knot_variance5(t, off):
    s = 0.0
    for p in range(5):
        for q in range(p + 1, 5):
            d = t[off + p] - t[off + q]
            s += d * d
    return s / 150.0


@njit(cache=True)
def draw_knots_prior(rng, lo, hi, out, off):
    """Nested-uniform base measure: middle knot first, then outwards."""
    k3 = lo + (hi - lo) * rng.random()
    k2 = lo + (k3 - lo) * rng.random()
    k4 = k3 + (hi - k3) * rng.random()
    k1 = lo + (k2 - lo) * rng.random()
    k5 = k4 + (hi - k4) * rng.random()
    out[off] = k1
    out[off + 1] = k2
    out[off + 2] = k3
    out[off + 3] = k4
    out[off + 4] = k5


@njit(cache=True)
def _strictly_ascending(t, off, lo, hi):
    if not (t[off] > lo and t[off + 4] < hi):
        return False
    for p in range(4):
        if not t[off + p] < t[off + p + 1]:
            return False
    return True


@njit(cache=True)
def draw_component_prior(rng, conf, out, max_tries):
    """Constrained base-measure draw of a 10-knot component; returns success."""
    c_l = conf[4]
    c_b = conf[5]
    ok = False
    for _ in range(max_tries):
        draw_knots_prior(rng, conf[0], conf[1], out, 0)
        if _strictly_ascending(out, 0, conf[0], conf[1]) and math.sqrt(knot_variance5(out, 0)) > c_l:
            ok = True
            break
    if not ok:
        return False
    for _ in range(max_tries):
        draw_knots_prior(rng, conf[2], conf[3], out, 5)
        if _strictly_ascending(out, 5, conf[2], conf[3]) and math.sqrt(knot_variance5(out, 5)) > c_b:
            return True
    return False


@njit(cache=True)
def _g0_log_factor(k, val, t, off, lo, hi):
    # the part of log G0 that depends on knot k (0-based) when it takes ``val``
    if k == 1:
        return -math.log(val - lo)
    if k == 2:
        return -math.log(val - lo) - math.log(hi - val)
    if k == 3:
        return -math.log(hi - val)
    return 0.0


@njit(cache=True)
def knot_log_conditional(k, val, t, off, xs, ws, lo, hi, c, work):
    """Unnormalised log full conditional of knot ``k`` at value ``val``.

    ``t[off:off+5]`` holds the current knots (entry ``k`` is overwritten and
    restored); ``xs``/``ws`` are the distinct member coordinates and their
    multiplicities; ``work`` is scratch of 48 entries. Returns ``-inf``
    outside the support or the constraint.
    """
    old = t[off + k]
    t[off + k] = val
    res = 0.0
    if not (t[off] > lo and t[off + 4] < hi):
        res = NEG_INF
    else:
        for p in range(4):
            if not t[off + p] < t[off + p + 1]:
                res = NEG_INF
                break
    if res == 0.0 and not (math.sqrt(knot_variance5(t, off)) > c):
        res = NEG_INF
    if res == 0.0:
        res = _g0_log_factor(k, val, t, off, lo, hi)
        cubic_coeffs_work(t, off, work, 32, work)
        for j in range(xs.shape[0]):
            b = poly_density(t, off, work, 32, xs[j])
            if b <= 0.0:
                res = NEG_INF
                break
            res += ws[j] * math.log(b)
    t[off + k] = old
    return res


@njit(cache=True)
def knot_bounds(k, t, off, lo, hi, xmin_data, xmax_data):
    """Support of the knot-k full conditional (left, right)."""
    if k == 0:
        return lo, min(xmin_data, t[off + 1])
    if k == 4:
        return max(xmax_data, t[off + 3]), hi
    return t[off + k - 1], t[off + k + 1]


@njit(cache=True)
def _envelope_log_max(k, t, off, xs, ws, lo, hi, c, left, right, n_coarse, n_fine, work):
    # coarse uniform grid, then a fine grid around the best coarse cell; the
    # effective resolution matches a uniform grid of n_coarse * n_fine points
    best = NEG_INF
    best_i = -1
    width = right - left
    for g in range(n_coarse):
        v = left + (g + 0.5) * width / n_coarse
        lp = knot_log_conditional(k, v, t, off, xs, ws, lo, hi, c, work)
        if lp > best:
            best = lp
            best_i = g
    if best_i < 0:
        return NEG_INF
    a = left + max(best_i - 0.5, 0.0) * width / n_coarse
    b = left + min(best_i + 1.5, n_coarse) * width / n_coarse
    for g in range(n_fine):
        v = a + (g + 0.5) * (b - a) / n_fine
        lp = knot_log_conditional(k, v, t, off, xs, ws, lo, hi, c, work)
        if lp > best:
            best = lp
    return best


@njit(cache=True)
def sample_knot(rng, k, t, off, xs, ws, lo, hi, c, xmin_data, xmax_data,
                n_coarse, n_fine, max_reject, diag):
    """Rejection draw of knot ``k`` from its full conditional (uniform proposal).

    Writes the accepted value into ``t`` and returns 0; returns 1 for an
    empty support, 2 when ``max_reject`` consecutive proposals fail.
    ``diag[3]`` counts envelope violations.
    """
    left, right = knot_bounds(k, t, off, lo, hi, xmin_data, xmax_data)
    if not right > left:
        return 1
    work = np.empty(48)
    log_env = _envelope_log_max(k, t, off, xs, ws, lo, hi, c, left, right, n_coarse, n_fine, work)
    if log_env == NEG_INF:
        # no feasible grid point: fall back to the current value if it is feasible
        log_env = knot_log_conditional(k, t[off + k], t, off, xs, ws, lo, hi, c, work)
        if log_env == NEG_INF or not (left < t[off + k] < right):
            return 1
    log_env += LOG_SAFETY
    rejects = 0
    while rejects < max_reject:
        v = left + (right - left) * rng.random()
        u = rng.random()
        lp = knot_log_conditional(k, v, t, off, xs, ws, lo, hi, c, work)
        if lp == NEG_INF:
            rejects += 1
            continue
        if lp > log_env:
            # envelope too low: double it and restart the draw
            diag[3] += 1
            log_env = lp + math.log(2.0)
            rejects = 0
            continue
        if math.log(u) + log_env < lp:
            if v > left and v < right:
                t[off + k] = v
                return 0
        rejects += 1
    return 2


# --------------------------------------------------------------------------
# PSF kernels
# --------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _axis_mass(lo, hi, m, s):
    """Mass of N(m, s^2) inside [lo, hi]; a tail is skipped once below 1e-17."""
    out = 1.0
    if m - lo < 8.5 * s:
        out -= 0.5 * math.erfc((m - lo) / (s * SQRT2))
    if hi - m < 8.5 * s:
        out -= 0.5 * math.erfc((hi - m) / (s * SQRT2))
    return out


GAUSS_CUTOFF2 = 144.0  # squared offset, in sigmas, beyond which the density is 0


@njit(cache=True, inline="always")
def gauss_psf_density(x, y, mx, my, s, x0, x1, y0, y1, truncate):
    """Gaussian PSF density; offsets beyond 12 sigma (relative density below
    e**-72) return 0 so that far clusters cost a single comparison."""
    dx = x - mx
    dy = y - my
    r2 = (dx * dx + dy * dy) / (s * s)
    if r2 > GAUSS_CUTOFF2:
        return 0.0
    d = math.exp(-0.5 * r2) / (2.0 * math.pi * s * s)
    if truncate:
        z = _axis_mass(x0, x1, mx, s) * _axis_mass(y0, y1, my, s)
        if z <= 0.0:
            return 0.0
        d /= z
    return d


@njit(cache=True)
def radial_profile_value(r, rnodes, prof):
    n = rnodes.shape[0]
    if r >= rnodes[n - 1]:
        return 0.0
    # profile grid is short; a linear scan beats bisection in practice
    j = 0
    while rnodes[j + 1] <= r:
        j += 1
    w = (r - rnodes[j]) / (rnodes[j + 1] - rnodes[j])
    return (1.0 - w) * prof[j] + w * prof[j + 1]


@njit(cache=True)
def circle_fraction_inside(cx, cy, r, x0, x1, y0, y1):
    """Fraction of the circle of radius r about (cx, cy) inside the rectangle."""
    if r <= 0.0:
        return 1.0
    d = np.empty(4)
    d[0] = x1 - cx  # right, direction 0
    d[1] = y1 - cy  # top, pi/2
    d[2] = cx - x0  # left, pi
    d[3] = cy - y0  # bottom, 3pi/2
    a = np.zeros(4)
    for s in range(4):
        if d[s] < r:
            ds = max(d[s], 0.0)
            a[s] = math.acos(ds / r)
    total = 2.0 * (a[0] + a[1] + a[2] + a[3])
    for s in range(4):
        ov = a[s] + a[(s + 1) % 4] - 0.5 * math.pi
        if ov > 0.0:
            total -= ov
    frac = 1.0 - total / (2.0 * math.pi)
    if frac < 0.0:
        return 0.0
    return frac


# 8-point Gauss-Legendre on [0, 1]
_gl_x, _gl_w = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_gl_x + 1.0)
_GL_W = 0.5 * _gl_w


@njit(cache=True)
def _profile_ring_mass(ra, rb, rnodes, prof, mx, my, x0, x1, y0, y1):
    # integral of p(r) 2 pi r f(r) over [ra, rb]; the substitution r = ra + h s^2
    # absorbs the square-root kink of f at a breakpoint sitting at ra
    h = rb - ra
    tot = 0.0
    for g in range(_GL_X.shape[0]):
        s = _GL_X[g]
        r = ra + h * s * s
        tot += _GL_W[g] * 2.0 * h * s * radial_profile_value(r, rnodes, prof) * 2.0 * math.pi * r \
            * circle_fraction_inside(mx, my, r, x0, x1, y0, y1)
    return tot


@njit(cache=True)
def tab_truncation_mass(mx, my, rnodes, prof, x0, x1, y0, y1):
    """Mass of a radial piecewise-linear PSF about (mx, my) inside the map."""
    n = rnodes.shape[0]
    rmax = rnodes[n - 1]
    dx0 = mx - x0
    dx1 = x1 - mx
    dy0 = my - y0
    dy1 = y1 - my
    if dx0 >= rmax and dx1 >= rmax and dy0 >= rmax and dy1 >= rmax:
        return 1.0
    brk = np.empty(n + 8)
    m = 0
    for j in range(n):
        brk[m] = rnodes[j]
        m += 1
    cand = np.array([dx0, dx1, dy0, dy1,
                     math.hypot(dx1, dy1), math.hypot(dx0, dy1),
                     math.hypot(dx0, dy0), math.hypot(dx1, dy0)])
    for c in cand:
        if 0.0 < c < rmax:
            brk[m] = c
            m += 1
    pts = np.sort(brk[:m])
    total = 0.0
    for j in range(m - 1):
        ra = pts[j]
        rb = pts[j + 1]
        if rb - ra <= 0.0:
            continue
        # split each piece so that both ends get the kink-absorbing substitution
        mid = 0.5 * (ra + rb)
        total += _profile_ring_mass(ra, mid, rnodes, prof, mx, my, x0, x1, y0, y1)
        total += _profile_ring_mass_rev(mid, rb, rnodes, prof, mx, my, x0, x1, y0, y1)
    return total


@njit(cache=True)
def _profile_ring_mass_rev(ra, rb, rnodes, prof, mx, my, x0, x1, y0, y1):
    # mirror of _profile_ring_mass, clustering nodes towards rb
    h = rb - ra
    tot = 0.0
    for g in range(_GL_X.shape[0]):
        s = _GL_X[g]
        r = rb - h * s * s
        tot += _GL_W[g] * 2.0 * h * s * radial_profile_value(r, rnodes, prof) * 2.0 * math.pi * r \
            * circle_fraction_inside(mx, my, r, x0, x1, y0, y1)
    return tot


@njit(cache=True)
def tab_psf_density(x, y, mx, my, rnodes, prof, x0, x1, y0, y1, truncate):
    r = math.sqrt((x - mx) ** 2 + (y - my) ** 2)
    d = radial_profile_value(r, rnodes, prof)
    if truncate and d > 0.0:
        z = tab_truncation_mass(mx, my, rnodes, prof, x0, x1, y0, y1)
        if z <= 0.0:
            return 0.0
        d /= z
    return d


# --------------------------------------------------------------------------
# generic kernel dispatch
# --------------------------------------------------------------------------

@njit(cache=True)
def cell_index(conf, x, y):
    ncx = int(conf[4])
    ncy = int(conf[5])
    u = int((x - conf[0]) / (conf[1] - conf[0]) * ncx)
    v = int((y - conf[2]) / (conf[3] - conf[2]) * ncy)
    u = min(max(u, 0), ncx - 1)
    v = min(max(v, 0), ncy - 1)
    return u * ncy + v


@njit(cache=True)
def kernel_density(kind, conf, theta, x, y, aux_row):
    if kind == GAUSS_PSF:
        return gauss_psf_density(x, y, theta[0], theta[1], aux_row[0],
                                 conf[0], conf[1], conf[2], conf[3], True)
    if kind == BSPLINE:
        return cubic_density(theta, 0, x) * cubic_density(theta, 5, y)
    if kind == TAB_PSF:
        nr = int(conf[4])
        return tab_psf_density(x, y, theta[0], theta[1], conf[5:5 + nr], aux_row[:nr],
                               conf[0], conf[1], conf[2], conf[3], True)
    # CELL
    ncell = int(conf[4]) * int(conf[5])
    a = int(theta[0])
    return conf[7 + a * ncell + cell_index(conf, x, y)]


@njit(cache=True)
def cluster_density(kind, conf, theta, x, y, aux_row):
    """Like :func:`kernel_density` but uses cached B-spline polynomials."""
    if kind == BSPLINE:
        fx = poly_density(theta, 0, theta, BSPLINE_CACHE, x)
        if fx == 0.0:
            return 0.0
        return fx * poly_density(theta, 5, theta, BSPLINE_CACHE + 16, y)
    return kernel_density(kind, conf, theta, x, y, aux_row)


# --------------------------------------------------------------------------
# index-based variants for the sampler's hot loop (array views are costly
# in compiled code, so these read straight from the parent arrays)
# --------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _poly3(th, j, l, off, coff, x):
    if x < th[j, l, off] or x >= th[j, l, off + 4]:
        return 0.0
    if x < th[j, l, off + 2]:
        i = 0 if x < th[j, l, off + 1] else 1
    else:
        i = 2 if x < th[j, l, off + 3] else 3
    u = x - th[j, l, off + i]
    b = coff + 4 * i
    v = th[j, l, b] + u * (th[j, l, b + 1] + u * (th[j, l, b + 2] + u * th[j, l, b + 3]))
    return v if v > 0.0 else 0.0


@njit(cache=True, inline="always")
def bspline_level_density(th, j, l, x, y, cached):
    """Bivariate B-spline density of ``th[j, l]``; ``cached`` uses the
    polynomial cache stored after the knots."""
    if cached:
        fx = _poly3(th, j, l, 0, BSPLINE_CACHE, x)
        if fx == 0.0:
            return 0.0
        return fx * _poly3(th, j, l, 5, BSPLINE_CACHE + 16, y)
    t0 = th[j, l, 0]
    t4 = th[j, l, 4]
    fx = cubic_bspline(t0, th[j, l, 1], th[j, l, 2], th[j, l, 3], t4, x)
    if fx == 0.0:
        return 0.0
    s0 = th[j, l, 5]
    s4 = th[j, l, 9]
    fy = cubic_bspline(s0, th[j, l, 6], th[j, l, 7], th[j, l, 8], s4, y)
    return 16.0 * fx * fy / ((t4 - t0) * (s4 - s0))


@njit(cache=True)
def _nested_uniform(rng, lo, hi, th, j, l, off):
    k3 = lo + (hi - lo) * rng.random()
    k2 = lo + (k3 - lo) * rng.random()
    k4 = k3 + (hi - k3) * rng.random()
    k1 = lo + (k2 - lo) * rng.random()
    k5 = k4 + (hi - k4) * rng.random()
    th[j, l, off] = k1
    th[j, l, off + 1] = k2
    th[j, l, off + 2] = k3
    th[j, l, off + 3] = k4
    th[j, l, off + 4] = k5
    if not (lo < k1 < k2 < k3 < k4 < k5 < hi):
        return -1.0
    s = 0.0
    for p in range(5):
        for q in range(p + 1, 5):
            d = th[j, l, off + p] - th[j, l, off + q]
            s += d * d
    return math.sqrt(s / 150.0)


@njit(cache=True)
def level_prior(rng, kind, confs, j, th, l):
    """Base-measure draw into ``th[j, l]``; False if a constrained draw failed."""
    if kind == GAUSS_PSF or kind == TAB_PSF:
        th[j, l, 0] = confs[j, 0] + (confs[j, 1] - confs[j, 0]) * rng.random()
        th[j, l, 1] = confs[j, 2] + (confs[j, 3] - confs[j, 2]) * rng.random()
        return True
    if kind == BSPLINE:
        ok = False
        for _ in range(10000):
            if _nested_uniform(rng, confs[j, 0], confs[j, 1], th, j, l, 0) > confs[j, 4]:
                ok = True
                break
        if not ok:
            return False
        for _ in range(10000):
            if _nested_uniform(rng, confs[j, 2], confs[j, 3], th, j, l, 5) > confs[j, 5]:
                return True
        return False
    return draw_prior(rng, kind, confs[j], th[j, l])


@njit(cache=True)
def draw_prior(rng, kind, conf, out):
    """Base-measure draw into ``out``; returns False if a constrained draw failed."""
    if kind == GAUSS_PSF or kind == TAB_PSF:
        out[0] = conf[0] + (conf[1] - conf[0]) * rng.random()
        out[1] = conf[2] + (conf[3] - conf[2]) * rng.random()
        return True
    if kind == BSPLINE:
        return draw_component_prior(rng, conf, out, 10000)
    n_atoms = int(conf[6])
    ncell = int(conf[4]) * int(conf[5])
    base = 7 + n_atoms * ncell
    tot = 0.0
    for a in range(n_atoms):
        tot += conf[base + a]
    u = rng.random() * tot
    acc = 0.0
    for a in range(n_atoms):
        acc += conf[base + a]
        if u < acc:
            out[0] = a
            return True
    out[0] = n_atoms - 1
    return True


@njit(cache=True)
def _truncnorm_axis_posterior(rng, c, s, lo, hi):
    # draws m on [lo, hi] with density prop. to N(m; c, s^2) / mass_[lo,hi](N(m, s^2))
    zmin = _axis_mass(lo, hi, lo, s)
    for _ in range(100000):
        m = c + s * rng.standard_normal()
        if m < lo or m > hi:
            continue
        if rng.random() * _axis_mass(lo, hi, m, s) < zmin:
            return m
    return min(max(c, lo), hi)


@njit(cache=True)
def _draw_radial_offset(rng, rnodes, prof):
    # rejection from the radial density 2 pi r p(r) using a uniform-in-r proposal
    n = rnodes.shape[0]
    rmax = rnodes[n - 1]
    top = 0.0
    for j in range(n):
        v = 2.0 * math.pi * rnodes[j] * prof[j]
        if v > top:
            top = v
    top *= 1.0001
    for _ in range(1000000):
        r = rmax * rng.random()
        if rng.random() * top < 2.0 * math.pi * r * radial_profile_value(r, rnodes, prof):
            return r
    return 0.0


@njit(cache=True)
def draw_single_posterior(rng, kind, conf, x, y, aux_row, out):
    """Exact draw of a singleton cluster parameter given its one member.

    Returns False for kinds without a tractable singleton posterior.
    """
    if kind == GAUSS_PSF:
        s = aux_row[0]
        out[0] = _truncnorm_axis_posterior(rng, x, s, conf[0], conf[1])
        out[1] = _truncnorm_axis_posterior(rng, y, s, conf[2], conf[3])
        return True
    if kind == TAB_PSF:
        nr = int(conf[4])
        rnodes = conf[5:5 + nr]
        prof = aux_row[:nr]
        x0, x1, y0, y1 = conf[0], conf[1], conf[2], conf[3]
        zmin = 0.999 * tab_truncation_mass(x0, y0, rnodes, prof, x0, x1, y0, y1)
        for _ in range(1000000):
            r = _draw_radial_offset(rng, rnodes, prof)
            ang = 2.0 * math.pi * rng.random()
            mx = x + r * math.cos(ang)
            my = y + r * math.sin(ang)
            if mx < x0 or mx > x1 or my < y0 or my > y1:
                continue
            z = tab_truncation_mass(mx, my, rnodes, prof, x0, x1, y0, y1)
            if rng.random() * z < zmin:
                out[0] = mx
                out[1] = my
                return True
        return False
    if kind == CELL:
        n_atoms = int(conf[6])
        ncell = int(conf[4]) * int(conf[5])
        base = 7 + n_atoms * ncell
        cidx = cell_index(conf, x, y)
        tot = 0.0
        for a in range(n_atoms):
            tot += conf[base + a] * conf[7 + a * ncell + cidx]
        u = rng.random() * tot
        acc = 0.0
        for a in range(n_atoms):
            acc += conf[base + a] * conf[7 + a * ncell + cidx]
            if u < acc:
                out[0] = a
                return True
        out[0] = n_atoms - 1
        return True
    return False


@njit(cache=True)
def pareto_pdf(e, e_min, eta):
    if e < e_min:
        return 0.0
    return eta * math.exp(eta * math.log(e_min) - (eta + 1.0) * math.log(e))

