"""Compiled sweep of the collapsed Gibbs sampler for a J-level mixture of DP mixtures.

State layout (J levels, ``cap`` cluster slots per level, ``P`` parameters):

* ``z[i]``           level of event i
* ``lab[i]``         cluster index of event i within level ``z[i]``
* ``params[j, l]``   parameter vector of cluster l of level j
* ``counts[j, l]``   occupancy; ``k[j]`` clusters are live, indices dense
* ``level_n[j]``     number of events in level j
"""

import math

import numpy as np
from numba import njit

from ._kernels import (BSPLINE, GAUSS_PSF, NEG_INF, PARAM_DIM, TAB_PSF, cell_index,
                       draw_component_prior, draw_single_posterior, kernel_density,
                       bspline_level_density, gauss_psf_density, level_prior, pareto_pdf, refresh_cache, sample_knot,
                       _axis_mass)

P = PARAM_DIM
# clusters at least this large also count towards the bright-cluster MH tally
BRIGHT_CLUSTER = 100


@njit(cache=True)
def remove_cluster(j, c, params, counts, k, z, lab):
    """Delete the (empty) cluster ``c`` of level ``j``, shifting later ones down."""
    kk = k[j]
    for l in range(c, kk - 1):
        counts[j, l] = counts[j, l + 1]
        for p in range(params.shape[2]):
            params[j, l, p] = params[j, l + 1, p]
    counts[j, kk - 1] = 0
    k[j] = kk - 1
    for i in range(z.shape[0]):
        if z[i] == j and lab[i] > c:
            lab[i] -= 1


@njit(cache=True)
def _fill_gauss(th, j, nl, mult, x, y, sig, x0, x1, y0, y1, terms, toff):
    s = 0.0
    for l in range(nl):
        t = mult[j, l] * gauss_psf_density(x, y, th[j, l, 0], th[j, l, 1], sig, x0, x1, y0, y1, True)
        terms[j, toff + l] = t
        s += t
    return s


@njit(cache=True)
def _fill_bspline(th, j, nl, mult, x, y, cached, terms, toff):
    s = 0.0
    for l in range(nl):
        t = mult[j, l] * bspline_level_density(th, j, l, x, y, cached)
        terms[j, toff + l] = t
        s += t
    return s


@njit(cache=True)
def _fill_generic(kind, conf, th, j, nl, mult, x, y, aux_row, terms, toff):
    s = 0.0
    for l in range(nl):
        t = mult[j, l] * kernel_density(kind, conf, th[j, l], x, y, aux_row)
        terms[j, toff + l] = t
        s += t
    return s


@njit(cache=True)
def _fill(kind, confs, th, j, nl, mult, x, y, aux, i, cached, terms, toff):
    if kind == GAUSS_PSF:
        return _fill_gauss(th, j, nl, mult, x, y, aux[j, i, 0], confs[j, 0], confs[j, 1],
                           confs[j, 2], confs[j, 3], terms, toff)
    if kind == BSPLINE:
        return _fill_bspline(th, j, nl, mult, x, y, cached, terms, toff)
    return _fill_generic(kind, confs[j], th, j, nl, mult, x, y, aux[j, i], terms, toff)


@njit(cache=True)
def event_weights(i, x, y, e, aux, params, counts, k, level_n, kinds, confs, alphas, hs,
                  lam, spec_on, e_min, etas, tilde, tilde_ok, terms, wlev, mult):
    """Fill level weights ``wlev`` and within-level choice weights ``terms``.

    ``terms[j, :k[j]]`` are existing clusters, ``terms[j, k[j]:k[j]+hs[j]]``
    the auxiliary values. The event must already be removed from the tallies.
    Returns the total weight.
    """
    J = kinds.shape[0]
    total = 0.0
    for j in range(J):
        kj = k[j]
        s = _fill(kinds[j], confs, params, j, kj, counts, x, y, aux, i, True, terms, 0)
        a = alphas[j] / hs[j]
        for h in range(hs[j]):
            mult[j, h] = a if tilde_ok[j, h] else 0.0
        s += _fill(kinds[j], confs, tilde, j, hs[j], mult, x, y, aux, i, False, terms, kj)
        w = (level_n[j] + lam) * s / (level_n[j] + alphas[j])
        if spec_on:
            w *= pareto_pdf(e, e_min, etas[j])
        wlev[j] = w
        total += w
    return total


@njit(cache=True)
def _pick(rng, w, n, total):
    u = rng.random() * total
    acc = 0.0
    for r in range(n):
        acc += w[r]
        if u < acc:
            return r
    # round-off: return the last positive entry
    for r in range(n - 1, -1, -1):
        if w[r] > 0.0:
            return r
    return n - 1


@njit(cache=True)
def draw_aux(rng, kinds, confs, hs, tilde, tilde_ok, skip_j, skip_h):
    for j in range(kinds.shape[0]):
        for h in range(hs[j]):
            if j == skip_j and h == skip_h:
                continue
            tilde_ok[j, h] = level_prior(rng, kinds[j], confs, j, tilde, h)


@njit(cache=True)
def update_event(rng, i, xy, energies, aux, z, lab, params, counts, k, level_n, kinds, confs,
                 alphas, hs, lam, spec_on, e_min, etas, tilde, tilde_ok, terms, wlev,
                 fresh_aux, oldp, mult):
    """Steps 1-3 for event ``i``: remove it, draw its level and cluster, compact."""
    x = xy[i, 0]
    y = xy[i, 1]
    e = energies[i]
    j0 = z[i]
    c0 = lab[i]
    counts[j0, c0] -= 1
    level_n[j0] -= 1
    singleton = counts[j0, c0] == 0
    for p in range(P):
        oldp[p] = params[j0, c0, p]
    if singleton:
        remove_cluster(j0, c0, params, counts, k, z, lab)
    if fresh_aux:
        if singleton:
            # the vacated parameter is one of the auxiliary values
            for p in range(P):
                tilde[j0, 0, p] = oldp[p]
            tilde_ok[j0, 0] = True
            draw_aux(rng, kinds, confs, hs, tilde, tilde_ok, j0, 0)
        else:
            draw_aux(rng, kinds, confs, hs, tilde, tilde_ok, -1, -1)
    total = event_weights(i, x, y, e, aux, params, counts, k, level_n, kinds, confs, alphas,
                          hs, lam, spec_on, e_min, etas, tilde, tilde_ok, terms, wlev, mult)
    if not (total > 0.0) or not math.isfinite(total):
        # nowhere to go: put the event back where it was
        if singleton:
            c0 = k[j0]
            for p in range(P):
                params[j0, c0, p] = oldp[p]
            k[j0] += 1
        counts[j0, c0] += 1
        level_n[j0] += 1
        lab[i] = c0
        return 1
    j = _pick(rng, wlev, kinds.shape[0], total)
    kj = k[j]
    sj = 0.0
    for r in range(kj + hs[j]):
        sj += terms[j, r]
    r = _pick(rng, terms[j], kj + hs[j], sj)
    if r < kj:
        counts[j, r] += 1
        lab[i] = r
    else:
        h = r - kj
        ok = draw_single_posterior(rng, kinds[j], confs[j], x, y, aux[j, i], params[j, kj])
        if not ok:
            for p in range(P):
                params[j, kj, p] = tilde[j, h, p]
            refresh_cache(kinds[j], params[j, kj])
        counts[j, kj] = 1
        k[j] = kj + 1
        lab[i] = kj
    z[i] = j
    level_n[j] += 1
    return 0


# --------------------------------------------------------------------------
# cluster parameter updates
# --------------------------------------------------------------------------

@njit(cache=True)
def _gauss_loglik(mx, my, members, xy, aux, j, x0, x1, y0, y1):
    s_tot = 0.0
    for q in range(members.shape[0]):
        i = members[q]
        s = aux[j, i, 0]
        dx = xy[i, 0] - mx
        dy = xy[i, 1] - my
        s_tot -= (dx * dx + dy * dy) / (2.0 * s * s)
        z = _axis_mass(x0, x1, mx, s) * _axis_mass(y0, y1, my, s)
        if z < 1.0:
            s_tot -= math.log(z)
    return s_tot


@njit(cache=True)
def _tab_loglik(mx, my, members, xy, aux, j, conf):
    theta = np.array([mx, my])
    s_tot = 0.0
    for q in range(members.shape[0]):
        i = members[q]
        d = kernel_density(TAB_PSF, conf, theta, xy[i, 0], xy[i, 1], aux[j, i])
        if d <= 0.0:
            return NEG_INF
        s_tot += math.log(d)
    return s_tot


@njit(cache=True)
def _mh_location(rng, theta, members, xy, aux, j, kind, conf, prop_sd, diag):
    x0, x1, y0, y1 = conf[0], conf[1], conf[2], conf[3]
    mx = theta[0] + prop_sd * rng.standard_normal()
    my = theta[1] + prop_sd * rng.standard_normal()
    diag[1] += 1
    if members.shape[0] >= BRIGHT_CLUSTER:
        diag[6] += 1
    if mx < x0 or mx > x1 or my < y0 or my > y1:
        return
    if kind == GAUSS_PSF:
        cur = _gauss_loglik(theta[0], theta[1], members, xy, aux, j, x0, x1, y0, y1)
        new = _gauss_loglik(mx, my, members, xy, aux, j, x0, x1, y0, y1)
    else:
        cur = _tab_loglik(theta[0], theta[1], members, xy, aux, j, conf)
        new = _tab_loglik(mx, my, members, xy, aux, j, conf)
    if math.log(rng.random()) < new - cur:
        theta[0] = mx
        theta[1] = my
        diag[0] += 1
        if members.shape[0] >= BRIGHT_CLUSTER:
            diag[5] += 1


@njit(cache=True)
def _weighted_unique(vals):
    srt = np.sort(vals)
    n = srt.shape[0]
    xs = np.empty(n)
    ws = np.empty(n)
    m = 0
    for q in range(n):
        if m > 0 and srt[q] == xs[m - 1]:
            ws[m - 1] += 1.0
        else:
            xs[m] = srt[q]
            ws[m] = 1.0
            m += 1
    return xs[:m], ws[:m]


@njit(cache=True)
def redraw_covering(rng, conf, theta, xmin, xmax, ymin, ymax, max_tries):
    """Constrained prior draw that keeps the members inside the support if possible."""
    tmp = np.empty(P)
    for _ in range(max_tries):
        if not draw_component_prior(rng, conf, tmp, max_tries):
            break
        if tmp[0] < xmin and tmp[4] > xmax and tmp[5] < ymin and tmp[9] > ymax:
            for p in range(10):
                theta[p] = tmp[p]
            return True
    if draw_component_prior(rng, conf, tmp, max_tries):
        for p in range(10):
            theta[p] = tmp[p]
    return False


@njit(cache=True)
def _update_bspline(rng, theta, members, xy, conf, n_coarse, n_fine, max_reject, diag):
    lo_x, hi_x, lo_y, hi_y = conf[0], conf[1], conf[2], conf[3]
    nm = members.shape[0]
    col = np.empty(nm)
    bounds_min = np.empty(2)
    bounds_max = np.empty(2)
    for axis in range(2):
        for q in range(nm):
            col[q] = xy[members[q], axis]
        xs, ws = _weighted_unique(col)
        if xs.shape[0] > 0:
            dmin = xs[0]
            dmax = xs[xs.shape[0] - 1]
        else:
            dmin = np.inf
            dmax = -np.inf
        bounds_min[axis] = dmin
        bounds_max[axis] = dmax
        lo = lo_x if axis == 0 else lo_y
        hi = hi_x if axis == 0 else hi_y
        c = conf[4] if axis == 0 else conf[5]
        for kn in range(5):
            st = sample_knot(rng, kn, theta, 5 * axis, xs, ws, lo, hi, c, dmin, dmax,
                             n_coarse, n_fine, max_reject, diag)
            if st != 0:
                # empty or infeasible support: redraw the component from the prior
                diag[2] += 1
                if axis == 0:
                    for q in range(nm):
                        col[q] = xy[members[q], 1]
                    ymin = np.inf
                    ymax = -np.inf
                    for q in range(nm):
                        ymin = min(ymin, col[q])
                        ymax = max(ymax, col[q])
                    bounds_min[1] = ymin
                    bounds_max[1] = ymax
                redraw_covering(rng, conf, theta, bounds_min[0], bounds_max[0],
                                bounds_min[1], bounds_max[1], 10000)
                return


@njit(cache=True)
def _update_cell(rng, theta, members, xy, conf):
    ncell = int(conf[4]) * int(conf[5])
    n_atoms = int(conf[6])
    base = 7 + n_atoms * ncell
    logw = np.empty(n_atoms)
    best = NEG_INF
    for a in range(n_atoms):
        lw = math.log(conf[base + a]) if conf[base + a] > 0 else NEG_INF
        for q in range(members.shape[0]):
            i = members[q]
            d = conf[7 + a * ncell + cell_index(conf, xy[i, 0], xy[i, 1])]
            if d <= 0.0:
                lw = NEG_INF
                break
            lw += math.log(d)
        logw[a] = lw
        if lw > best:
            best = lw
    tot = 0.0
    for a in range(n_atoms):
        logw[a] = math.exp(logw[a] - best) if logw[a] > NEG_INF else 0.0
        tot += logw[a]
    theta[0] = _pick(rng, logw, n_atoms, tot)


@njit(cache=True)
def update_parameters(rng, xy, aux, z, lab, params, counts, k, level_n, kinds, confs, prop_sd,
                      n_coarse, n_fine, max_reject, diag):
    """Refresh every cluster parameter given its members."""
    n = xy.shape[0]
    for j in range(kinds.shape[0]):
        kj = k[j]
        if kj == 0:
            continue
        start = np.zeros(kj + 1, dtype=np.int64)
        for i in range(n):
            if z[i] == j:
                start[lab[i] + 1] += 1
        for l in range(kj):
            start[l + 1] += start[l]
        fill = start[:kj].copy()
        order = np.empty(start[kj], dtype=np.int64)
        for i in range(n):
            if z[i] == j:
                order[fill[lab[i]]] = i
                fill[lab[i]] += 1
        for l in range(kj):
            members = order[start[l]:start[l + 1]]
            if kinds[j] == GAUSS_PSF or kinds[j] == TAB_PSF:
                _mh_location(rng, params[j, l], members, xy, aux, j, kinds[j], confs[j], prop_sd, diag)
            elif kinds[j] == BSPLINE:
                _update_bspline(rng, params[j, l], members, xy, confs[j], n_coarse, n_fine,
                                max_reject, diag)
                refresh_cache(BSPLINE, params[j, l])
            else:
                _update_cell(rng, params[j, l], members, xy, confs[j])


@njit(cache=True)
def sweep(rng, xy, energies, aux, z, lab, params, counts, k, level_n, kinds, confs, alphas,
          hs, lam, spec_on, e_min, etas, fresh_aux, random_scan, prop_sd, n_coarse, n_fine,
          max_reject, diag):
    """One full sweep: per-event reassignment, then the cluster parameter
    refresh (the spectral update runs outside)."""
    J = kinds.shape[0]
    n = xy.shape[0]
    hmax = 1
    for j in range(J):
        hmax = max(hmax, hs[j])
    tilde = np.zeros((J, hmax, P))
    tilde_ok = np.zeros((J, hmax), dtype=np.bool_)
    terms = np.zeros((J, n + 1 + hmax))
    wlev = np.zeros(J)
    oldp = np.zeros(P)
    mult = np.zeros((J, hmax))
    if not fresh_aux:
        draw_aux(rng, kinds, confs, hs, tilde, tilde_ok, -1, -1)
    if random_scan:
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for q in range(n):
        stuck = update_event(rng, order[q], xy, energies, aux, z, lab, params, counts, k, level_n,
                             kinds, confs, alphas, hs, lam, spec_on, e_min, etas, tilde,
                             tilde_ok, terms, wlev, fresh_aux, oldp, mult)
        diag[4] += stuck
    update_parameters(rng, xy, aux, z, lab, params, counts, k, level_n, kinds, confs, prop_sd,
                      n_coarse, n_fine, max_reject, diag)
