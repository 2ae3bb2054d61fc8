"""Collapsed Gibbs sampler for a mixture of Dirichlet-process mixtures.

The engine handles any number of levels (one DP mixture each); the spatial
and joint models use two levels, sources (PSF kernels) then background
(bivariate B-spline kernels). Per-event level/cluster updates and the
parameter refresh run compiled; spectral shapes and weight recovery run here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine as E
from . import _kernels as K
from .bspline import ENVELOPE_COARSE, ENVELOPE_FINE, MAX_REJECTIONS, BackgroundComponent
from .domain import Hyperparameters, MapBounds, ValidationError
from .spectral import gamma_pareto_update

SOURCE = "source"
BACKGROUND = "background"


@dataclass
class Level:
    """One DP mixture: kernel kind, its flat configuration and per-event aux data."""

    name: str
    kind: int
    conf: np.ndarray
    alpha: float
    h: int
    aux: np.ndarray
    eta_prior: tuple[float, float] = (1.0, 1.0)
    init_param: np.ndarray | None = None


@dataclass
class MixtureModel:
    levels: list[Level]
    xy: np.ndarray
    energies: np.ndarray
    lam: float = 1.0
    spectral: bool = False
    e_min: float = 1.0
    prop_sd2: float = 0.001
    aux_mode: str = "event"
    scan: str = "fixed"

    def __post_init__(self):
        self.xy = np.ascontiguousarray(self.xy, dtype=float).reshape(-1, 2)
        self.energies = np.ascontiguousarray(self.energies, dtype=float).reshape(-1)
        if len(self.xy) != len(self.energies):
            raise ValidationError("xy and energies differ in length")
        if self.spectral and np.any(self.energies < self.e_min):
            raise ValidationError("energies below e_min")
        n = len(self.xy)
        J = len(self.levels)
        a_dim = max(lv.aux.shape[1] if lv.aux.ndim == 2 else 1 for lv in self.levels)
        self.aux = np.zeros((J, n, a_dim))
        for j, lv in enumerate(self.levels):
            if lv.aux.size:
                a = lv.aux.reshape(n, -1)
                self.aux[j, :, :a.shape[1]] = a
        c_dim = max(len(lv.conf) for lv in self.levels)
        self.confs = np.zeros((J, c_dim))
        for j, lv in enumerate(self.levels):
            self.confs[j, :len(lv.conf)] = lv.conf
        self.kinds = np.array([lv.kind for lv in self.levels], dtype=np.int64)
        self.alphas = np.array([lv.alpha for lv in self.levels], dtype=float)
        self.hs = np.array([lv.h for lv in self.levels], dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.xy)

    @property
    def names(self) -> list[str]:
        return [lv.name for lv in self.levels]

    def level_index(self, name: str) -> int:
        return self.names.index(name)


def broad_component(bounds: MapBounds, c_ell: float, c_b: float) -> np.ndarray:
    """Wide knot vectors covering the whole map, used to start every chain."""
    out = []
    for lo, hi, c in ((bounds.x_min, bounds.x_max, c_ell), (bounds.y_min, bounds.y_max, c_b)):
        span = hi - lo
        for frac in ([1e-3, 0.25, 0.5, 0.75, 1 - 1e-3], [1e-3, 2e-3, 0.5, 1 - 2e-3, 1 - 1e-3]):
            t = lo + span * np.array(frac)
            if math.sqrt(K.knot_variance5(t, 0)) > c:
                out.append(t)
                break
        else:
            raise ValidationError(
                f"smoothness floor {c} deg cannot be met on an axis {span} deg wide")
    return np.concatenate(out)


def bspline_conf(bounds: MapBounds, c_ell: float, c_b: float) -> np.ndarray:
    return np.array(list(bounds.rect()) + [c_ell, c_b], dtype=float)


def build_model(xy, energies, bounds: MapBounds, hyper: Hyperparameters, psf=None,
                model: str = "spatial", aux_mode: str = "event", scan: str = "fixed") -> MixtureModel:
    """Assemble the source + background model ("spatial"/"joint") or the
    background-only model ("background")."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    energies = np.asarray(energies, dtype=float).reshape(-1)
    if len(xy) == 0:
        raise ValidationError("need at least one event")
    if not np.all(bounds.contains(xy[:, 0], xy[:, 1])):
        raise ValidationError("events outside the map")
    n = len(xy)
    bg = Level(BACKGROUND, K.BSPLINE, bspline_conf(bounds, hyper.c_ell, hyper.c_b),
               hyper.alpha_b, int(hyper.h_b), np.zeros((n, 1)),
               (hyper.a_eta_b, hyper.b_eta_b),
               broad_component(bounds, hyper.c_ell, hyper.c_b))
    if model == "background":
        levels = [bg]
    elif model in ("spatial", "joint"):
        if psf is None:
            raise ValidationError("a PSF model is required")
        src = Level(SOURCE, psf.kind, psf.engine_conf(bounds), hyper.alpha_s, int(hyper.h_s),
                    psf.engine_aux(energies), (hyper.a_eta_s, hyper.b_eta_s))
        levels = [src, bg]
    else:
        raise ValidationError(f"unknown model {model!r}")
    return MixtureModel(levels, xy, energies, lam=hyper.lam, spectral=(model == "joint"),
                        e_min=bounds.e_min, prop_sd2=hyper.prop_sd2, aux_mode=aux_mode, scan=scan)


@dataclass
class ChainState:
    """Complete latent state of one chain plus its random stream."""

    z: np.ndarray
    lab: np.ndarray
    params: np.ndarray
    counts: np.ndarray
    k: np.ndarray
    level_n: np.ndarray
    etas: np.ndarray
    diag: np.ndarray
    rng: np.random.Generator
    weight_rng: np.random.Generator
    sweeps: int = 0

    DIAG_NAMES = ("mh_accepted", "mh_proposed", "background_redraws",
                  "envelope_violations", "stuck_events", "mh_bright_accepted",
                  "mh_bright_proposed")

    def copy(self) -> "ChainState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        wrng = np.random.Generator(np.random.PCG64())
        wrng.bit_generator.state = self.weight_rng.bit_generator.state
        return ChainState(self.z.copy(), self.lab.copy(), self.params.copy(), self.counts.copy(),
                          self.k.copy(), self.level_n.copy(), self.etas.copy(), self.diag.copy(),
                          rng, wrng, self.sweeps)

    def cluster_params(self, j: int) -> np.ndarray:
        return self.params[j, :self.k[j]]

    def cluster_counts(self, j: int) -> np.ndarray:
        return self.counts[j, :self.k[j]]

    def level_labels(self, j: int) -> np.ndarray:
        """1-based cluster labels within level ``j``; 0 for events in other levels."""
        return np.where(self.z == j, self.lab + 1, 0)

    def diagnostics(self) -> dict:
        d = dict(zip(self.DIAG_NAMES, (int(v) for v in self.diag)))
        d["mh_acceptance"] = (d["mh_accepted"] / d["mh_proposed"]) if d["mh_proposed"] else float("nan")
        d["mh_bright_acceptance"] = (d["mh_bright_accepted"] / d["mh_bright_proposed"]
                                     if d["mh_bright_proposed"] else float("nan"))
        return d

    def check(self, model: MixtureModel) -> None:
        """Raise AssertionError if any bookkeeping invariant is broken."""
        J = len(model.levels)
        assert self.z.min(initial=0) >= 0 and self.z.max(initial=0) < J
        for j in range(J):
            kj = self.k[j]
            members = self.lab[self.z == j]
            assert len(members) == self.level_n[j]
            tally = np.bincount(members, minlength=kj) if len(members) else np.zeros(kj, int)
            assert len(tally) == kj, "labels outside the live cluster range"
            assert np.array_equal(tally, self.counts[j, :kj]), "occupancy tallies out of sync"
            assert np.all(self.counts[j, :kj] > 0), "empty cluster"
            assert np.all(self.counts[j, kj:] == 0)
            if model.kinds[j] == K.BSPLINE:
                for theta in self.params[j, :kj]:
                    assert np.all(np.diff(theta[:5]) > 0) and np.all(np.diff(theta[5:10]) > 0)

    # --- snapshots -------------------------------------------------------
    def to_npz(self, path) -> None:
        np.savez(path, z=self.z, lab=self.lab, params=self.params, counts=self.counts, k=self.k,
                 level_n=self.level_n, etas=self.etas, diag=self.diag,
                 sweeps=np.array(self.sweeps),
                 rng=np.array(json.dumps(self.rng.bit_generator.state)),
                 weight_rng=np.array(json.dumps(self.weight_rng.bit_generator.state)))

    @classmethod
    def from_npz(cls, path) -> "ChainState":
        with np.load(path) as d:
            rng = np.random.Generator(np.random.PCG64())
            rng.bit_generator.state = json.loads(str(d["rng"]))
            wrng = np.random.Generator(np.random.PCG64())
            wrng.bit_generator.state = json.loads(str(d["weight_rng"]))
            return cls(d["z"].copy(), d["lab"].copy(), d["params"].copy(), d["counts"].copy(),
                       d["k"].copy(), d["level_n"].copy(), d["etas"].copy(), d["diag"].copy(),
                       rng, wrng, int(d["sweeps"]))


def init_state(model: MixtureModel, seed: int) -> ChainState:
    """All events in one cluster of the last level (the background)."""
    n, J = model.n, len(model.levels)
    ss = np.random.SeedSequence(seed)
    chain_ss, weight_ss = ss.spawn(2)
    rng = np.random.Generator(np.random.PCG64(chain_ss))
    wrng = np.random.Generator(np.random.PCG64(weight_ss))
    params = np.zeros((J, n + 1, E.P))
    counts = np.zeros((J, n + 1), dtype=np.int64)
    k = np.zeros(J, dtype=np.int64)
    level_n = np.zeros(J, dtype=np.int64)
    last = model.levels[-1]
    if last.init_param is not None:
        params[J - 1, 0, :len(last.init_param)] = last.init_param
    elif last.kind in (K.GAUSS_PSF, K.TAB_PSF):
        params[J - 1, 0, :2] = model.xy.mean(axis=0)
    K.refresh_cache(last.kind, params[J - 1, 0])
    counts[J - 1, 0] = n
    k[J - 1] = 1
    level_n[J - 1] = n
    etas = np.array([a / b for a, b in (lv.eta_prior for lv in model.levels)])
    return ChainState(np.full(n, J - 1, dtype=np.int64), np.zeros(n, dtype=np.int64), params,
                      counts, k, level_n, etas, np.zeros(len(ChainState.DIAG_NAMES)), rng, wrng)


def gibbs_sweep(model: MixtureModel, state: ChainState) -> None:
    """One iteration: compiled event, cluster-parameter and location updates,
    then the spectral update if enabled."""
    E.sweep(state.rng, model.xy, model.energies, model.aux, state.z, state.lab, state.params,
            state.counts, state.k, state.level_n, model.kinds, model.confs, model.alphas,
            model.hs, float(model.lam), bool(model.spectral), float(model.e_min), state.etas,
            model.aux_mode == "event", model.scan == "random", math.sqrt(model.prop_sd2),
            ENVELOPE_COARSE, ENVELOPE_FINE, MAX_REJECTIONS, state.diag)
    if model.spectral:
        update_spectral(model, state)
    state.sweeps += 1


def update_spectral(model: MixtureModel, state: ChainState) -> None:
    """Gamma-conjugate draw of every level's Pareto shape."""
    for j, lv in enumerate(model.levels):
        a, b = gamma_pareto_update(*lv.eta_prior, model.energies[state.z == j], model.e_min)
        state.etas[j] = state.rng.gamma(a, 1.0 / b)


def level_probabilities(model: MixtureModel, state: ChainState, i: int) -> np.ndarray:
    """Step-1 level probabilities for event ``i`` with fresh auxiliary values.

    Works on a copy; the caller's state, generator included, is untouched.
    """
    st = state.copy()
    z0, c0 = st.z[i], st.lab[i]
    st.counts[z0, c0] -= 1
    st.level_n[z0] -= 1
    if st.counts[z0, c0] == 0:
        E.remove_cluster(z0, c0, st.params, st.counts, st.k, st.z, st.lab)
        st.lab[i] = -1
    J = len(model.levels)
    hmax = int(model.hs.max())
    tilde = np.zeros((J, hmax, E.P))
    tilde_ok = np.zeros((J, hmax), dtype=bool)
    E.draw_aux(st.rng, model.kinds, model.confs, model.hs, tilde, tilde_ok, -1, -1)
    terms = np.zeros((J, model.n + 1 + hmax))
    wlev = np.zeros(J)
    total = E.event_weights(i, model.xy[i, 0], model.xy[i, 1], model.energies[i], model.aux,
                            st.params, st.counts, st.k, st.level_n, model.kinds, model.confs,
                            model.alphas, model.hs, float(model.lam), bool(model.spectral),
                            float(model.e_min), st.etas, tilde, tilde_ok, terms, wlev,
                            np.zeros((J, hmax)))
    return wlev / total


def recover_weights(level_counts: list[np.ndarray], lam: float, alphas, rng):
    """Draw level weights and within-level cluster weights given occupancies.

    Returns ``(level_weights, [cluster weights per level], [tail mass per level])``.
    Level weights are Dirichlet(lam + n_j); within a level, weights of the
    occupied clusters follow sequential Beta(n_l, alpha + sum_{m>l} n_m)
    sticks, and the unbroken remainder is the tail mass of empty clusters.
    """
    n_j = np.array([np.sum(c) for c in level_counts], dtype=float)
    g = rng.gamma(lam + n_j)
    level_w = g / g.sum()
    weights, tails = [], []
    for counts, alpha in zip(level_counts, alphas):
        counts = np.asarray(counts, dtype=float)
        remaining = np.cumsum(counts[::-1])[::-1]
        stick = 1.0
        w = np.empty(len(counts))
        for l, nl in enumerate(counts):
            rest = remaining[l + 1] if l + 1 < len(counts) else 0.0
            v = rng.beta(nl, alpha + rest) if alpha + rest > 0 else 1.0
            w[l] = stick * v
            stick *= 1.0 - v
        weights.append(w)
        tails.append(stick)
    return level_w, weights, tails


@dataclass
class Trace:
    """Retained iterations of one chain.

    ``levels`` names the mixture levels; per-iteration arrays are indexed by
    level. Source locations and, optionally, background knots are kept with
    their occupancies.
    """

    levels: list[str]
    n_events: int
    iters: list[int] = field(default_factory=list)
    k: list[np.ndarray] = field(default_factory=list)
    etas: list[np.ndarray] = field(default_factory=list)
    level_n: list[np.ndarray] = field(default_factory=list)
    mus: list[np.ndarray] = field(default_factory=list)
    mu_counts: list[np.ndarray] = field(default_factory=list)
    bgs: list[np.ndarray] = field(default_factory=list)
    bg_counts: list[np.ndarray] = field(default_factory=list)
    weights: list[tuple] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iters)

    def _col(self, name):
        return self.levels.index(name) if name in self.levels else None

    @property
    def k_s(self) -> np.ndarray:
        j = self._col(SOURCE)
        return np.array([k[j] if j is not None else 0 for k in self.k], dtype=int)

    @property
    def k_b(self) -> np.ndarray:
        j = self._col(BACKGROUND)
        return np.array([k[j] if j is not None else 0 for k in self.k], dtype=int)

    @property
    def n_source(self) -> np.ndarray:
        j = self._col(SOURCE)
        return np.array([m[j] if j is not None else 0 for m in self.level_n], dtype=int)

    @property
    def n_background(self) -> np.ndarray:
        j = self._col(BACKGROUND)
        return np.array([m[j] if j is not None else 0 for m in self.level_n], dtype=int)

    def eta(self, name: str) -> np.ndarray:
        j = self._col(name)
        return np.array([e[j] for e in self.etas])

    def after_burn_in(self, fraction: float) -> "Trace":
        """Drop records from the first ``fraction`` of the iterations run."""
        total = self.meta.get("iterations", (self.iters[-1] if self.iters else 0))
        cut = int(math.floor(fraction * total))
        keep = [q for q, t in enumerate(self.iters) if t > cut]
        out = Trace(self.levels, self.n_events, meta=dict(self.meta))
        for name in ("iters", "k", "etas", "level_n", "mus", "mu_counts", "bgs", "bg_counts", "weights"):
            src = getattr(self, name)
            if src:
                setattr(out, name, [src[q] for q in keep])
        return out

    def record(self, t: int, model: MixtureModel, state: ChainState, record_background: bool,
               lam: float) -> None:
        self.iters.append(t)
        self.k.append(state.k.copy())
        self.etas.append(state.etas.copy() if model.spectral else np.full(len(state.k), np.nan))
        self.level_n.append(state.level_n.copy())
        names = model.names
        if SOURCE in names:
            j = names.index(SOURCE)
            self.mus.append(state.cluster_params(j)[:, :2].copy())
            self.mu_counts.append(state.cluster_counts(j).copy())
        if record_background and BACKGROUND in names:
            j = names.index(BACKGROUND)
            self.bgs.append(state.cluster_params(j)[:, :10].copy())
            self.bg_counts.append(state.cluster_counts(j).copy())
        level_w, w, _ = recover_weights([state.cluster_counts(j) for j in range(len(names))],
                                        lam, model.alphas, state.weight_rng)
        self.weights.append((level_w, w))

    def source_weights(self) -> list[np.ndarray]:
        """Relative intensity of every source cluster: level weight times cluster weight."""
        j = self._col(SOURCE)
        return [lw[j] * w[j] for lw, w in self.weights] if j is not None else []


def run_chain(model: MixtureModel, iterations: int, seed: int = 0, thin: int = 1,
              record_background: bool = False, state: ChainState | None = None,
              trace: Trace | None = None, callback=None) -> tuple[Trace, ChainState]:
    """Run (or continue) a chain to ``iterations`` total sweeps.

    Deterministic given ``seed``; passing a saved ``state`` continues the same
    random streams, so a resumed run reproduces an uninterrupted one.
    """
    if iterations < 0:
        raise ValidationError("iterations must be >= 0")
    if thin < 1:
        raise ValidationError("thin must be >= 1")
    if state is None:
        state = init_state(model, seed)
    if trace is None:
        trace = Trace(model.names, model.n)
    trace.meta["iterations"] = iterations
    while state.sweeps < iterations:
        gibbs_sweep(model, state)
        if state.sweeps % thin == 0:
            trace.record(state.sweeps, model, state, record_background, model.lam)
        if callback is not None:
            callback(state)
    return trace, state


def background_components(trace: Trace, q: int) -> list[BackgroundComponent]:
    return [BackgroundComponent.from_array(t) for t in trace.bgs[q]]


# --- trace files ---------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_trace(path, trace: Trace, start: int = 0, append: bool = False) -> None:
    """Write the line-oriented trace file from record ``start`` on; with
    ``append`` the records are added to an existing file without a header.

    Each record starts with ``iter t k_s k_b eta_s eta_b n_src``, followed by
    ``mu x y count`` per source cluster, optional ``bg l1..l5 b1..b5 count``
    lines and one ``w delta w_1 .. w_k`` line of recovered weights.
    """
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        if not append:
            fh.write("# dpsource trace v1\n")
            fh.write(f"# levels {' '.join(trace.levels)}\n")
            fh.write(f"# n_events {trace.n_events}\n")
            for key, val in sorted(trace.meta.items()):
                if key != "iterations":
                    fh.write(f"# meta {key} {val}\n")
            fh.write("# record: iter t k_s k_b eta_s eta_b n_src\n")
        js = trace._col(SOURCE)
        jb = trace._col(BACKGROUND)
        for q in range(start, len(trace)):
            eta_s = trace.etas[q][js] if js is not None else float("nan")
            eta_b = trace.etas[q][jb] if jb is not None else float("nan")
            fh.write(f"iter {trace.iters[q]} {trace.k_s[q]} {trace.k_b[q]} "
                     f"{_fmt(eta_s)} {_fmt(eta_b)} {trace.n_source[q]}\n")
            if trace.mus:
                for (x, y), c in zip(trace.mus[q], trace.mu_counts[q]):
                    fh.write(f"mu {_fmt(x)} {_fmt(y)} {int(c)}\n")
            if trace.bgs:
                for theta, c in zip(trace.bgs[q], trace.bg_counts[q]):
                    fh.write("bg " + " ".join(_fmt(v) for v in theta) + f" {int(c)}\n")
            if trace.weights:
                lw, w = trace.weights[q]
                delta = lw[js] if js is not None else 0.0
                ws = w[js] if js is not None else []
                fh.write("w " + " ".join(_fmt(v) for v in [delta, *ws]) + "\n")


def read_trace(path) -> Trace:
    levels, n_events, meta = None, 0, {}
    trace = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "#":
                if len(parts) >= 3 and parts[1] == "levels":
                    levels = parts[2:]
                elif len(parts) >= 3 and parts[1] == "n_events":
                    n_events = int(parts[2])
                elif len(parts) >= 4 and parts[1] == "meta":
                    meta[parts[2]] = " ".join(parts[3:])
                continue
            if trace is None:
                if levels is None:
                    raise ValidationError(f"{path}: missing '# levels' header")
                trace = Trace(levels, n_events, meta=meta)
                js, jb = trace._col(SOURCE), trace._col(BACKGROUND)
            try:
                if tag == "iter":
                    t, k_s, k_b = int(parts[1]), int(parts[2]), int(parts[3])
                    eta_s, eta_b = float(parts[4]), float(parts[5])
                    n_s = int(parts[6])
                    n_b = n_events - n_s
                    kk = np.zeros(len(levels), dtype=int)
                    ee = np.full(len(levels), np.nan)
                    nn = np.zeros(len(levels), dtype=int)
                    for j, kv, ev, nv in ((js, k_s, eta_s, n_s), (jb, k_b, eta_b, n_b)):
                        if j is not None:
                            kk[j], ee[j], nn[j] = kv, ev, nv
                    trace.iters.append(t)
                    trace.k.append(kk)
                    trace.etas.append(ee)
                    trace.level_n.append(nn)
                    if js is not None:
                        trace.mus.append(np.zeros((0, 2)))
                        trace.mu_counts.append(np.zeros(0, dtype=int))
                elif tag == "mu":
                    trace.mus[-1] = np.vstack([trace.mus[-1], [float(parts[1]), float(parts[2])]])
                    trace.mu_counts[-1] = np.append(trace.mu_counts[-1], int(parts[3]))
                elif tag == "bg":
                    while len(trace.bgs) < len(trace.iters):
                        trace.bgs.append(np.zeros((0, 10)))
                        trace.bg_counts.append(np.zeros(0, dtype=int))
                    trace.bgs[-1] = np.vstack([trace.bgs[-1], np.array(parts[1:11], dtype=float)])
                    trace.bg_counts[-1] = np.append(trace.bg_counts[-1], int(parts[11]))
                elif tag == "w":
                    vals = np.array(parts[1:], dtype=float)
                    lw = np.zeros(len(levels))
                    ws = [np.zeros(0) for _ in levels]
                    if js is not None:
                        lw[js] = vals[0]
                        ws[js] = vals[1:]
                        if jb is not None:
                            lw[jb] = 1.0 - vals[0]
                    trace.weights.append((lw, ws))
                else:
                    raise ValueError(f"unknown record tag {tag!r}")
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    if trace is None:
        trace = Trace(levels or [], n_events, meta=meta)
    while trace.bgs and len(trace.bgs) < len(trace.iters):
        trace.bgs.append(np.zeros((0, 10)))
        trace.bg_counts.append(np.zeros(0, dtype=int))
    return trace
