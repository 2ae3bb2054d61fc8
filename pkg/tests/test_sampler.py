import math

import numpy as np
import pytest
from scipy import stats

from dpsource import _kernels as K
from dpsource import oracle
from dpsource.bspline import BackgroundComponent, bivariate_kernel
from dpsource.domain import Hyperparameters, MapBounds
from dpsource.psf import GaussianPsf
from dpsource.sampler import (SOURCE, ChainState, Level, MixtureModel, Trace, build_model,
                              gibbs_sweep, init_state, level_probabilities, read_trace,
                              recover_weights, run_chain, update_spectral, write_trace)
from dpsource.spectral import pareto_sample
from dpsource.verify import micro_instance

BOUNDS = MapBounds.square(5.0)
UNIT = (0.0, 1.0, 0.0, 1.0)


def flat_kernel():
    return oracle.CellKernel(UNIT, 1, 1, np.array([[1.0]]), np.array([1.0]))


def set_levels(state: ChainState, z) -> None:
    """Put every event of level j into that level's single cluster."""
    z = np.asarray(z)
    state.z[:] = z
    state.lab[:] = 0
    state.counts[:] = 0
    for j in range(len(state.k)):
        n = int(np.sum(z == j))
        state.level_n[j] = n
        state.k[j] = 1 if n else 0
        state.counts[j, 0] = n


def test_level_weight_with_equal_likelihoods():
    xy = np.random.default_rng(0).uniform(0, 1, size=(10, 2))
    model = oracle.cell_model(xy, [flat_kernel(), flat_kernel()], 1.0, [2.0, 1.5])
    st = init_state(model, 0)
    set_levels(st, [0] * 4 + [1] * 6)
    p = level_probabilities(model, st, 9)
    assert p[0] == pytest.approx(5 / 11, abs=1e-12)


def test_zero_background_likelihood_forces_source():
    xy = np.array([[0.2, 0.2], [0.8, 0.8], [0.7, 0.9]])
    bg = oracle.CellKernel(UNIT, 2, 2, np.array([[0.0, 4 / 3, 4 / 3, 4 / 3]]), np.array([1.0]))
    src = oracle.CellKernel(UNIT, 2, 2, np.array([[1.0, 1.0, 1.0, 1.0]]), np.array([1.0]))
    model = oracle.cell_model(xy, [src, bg], 1.0, [2.0, 1.5])
    st = init_state(model, 1)
    set_levels(st, [1, 1, 1])
    assert level_probabilities(model, st, 0)[0] == 1.0
    for _ in range(50):
        gibbs_sweep(model, st)
        assert st.z[0] == 0


def single_level_model(n: int, alpha: float):
    xy = np.random.default_rng(2).uniform(0, 1, size=(n, 2))
    k = flat_kernel()
    lv = Level("level0", K.CELL, k.conf(), alpha, 5, np.zeros((n, 1)), init_param=np.zeros(1))
    return MixtureModel([lv], xy, np.ones(n))


def test_flat_kernel_partitions_follow_crp():
    model = single_level_model(5, 1.3)
    st = init_state(model, 3)
    counts: dict = {}
    sweeps = 10_000
    for _ in range(sweeps):
        gibbs_sweep(model, st)
        key = oracle.canonical_labels(st.lab)
        counts[key] = counts.get(key, 0) + 1
    law = oracle.crp_partition_law(5, 1.3)
    emp = {k: v / sweeps for k, v in counts.items()}
    assert oracle.total_variation(law, emp) < 0.05


def test_zero_concentration_never_splits():
    model = single_level_model(6, 0.0)
    st = init_state(model, 4)
    for _ in range(100):
        gibbs_sweep(model, st)
        assert st.k[0] == 1


def test_single_event_forms_one_cluster():
    model = single_level_model(1, 2.0)
    st = init_state(model, 5)
    for _ in range(20):
        gibbs_sweep(model, st)
        assert st.k[0] == 1 and st.counts[0, 0] == 1


def test_symmetric_pair_posterior_is_swap_symmetric():
    xy = np.array([[0.3, 0.3], [0.3, 0.3]])
    ker = oracle.CellKernel(UNIT, 2, 2, np.array([[2.5, 0.5, 0.5, 0.5], [0.5, 0.5, 0.5, 2.5]]),
                            np.array([0.5, 0.5]))
    post = oracle.enumerate_exact_posterior(xy, [ker, ker], 1.0, [2.0, 2.0])
    for (z, lab), p in post.items():
        swapped = (tuple(1 - v for v in z), lab)
        assert post[swapped] == pytest.approx(p)


@pytest.mark.slow
def test_micro_instance_matches_enumeration():
    xy, kernels, lam, alphas = micro_instance()
    exact = oracle.enumerate_exact_posterior(xy, kernels, lam, alphas)
    model = oracle.cell_model(xy, kernels, lam, alphas)
    emp = oracle.empirical_state_distribution(model, 100_000, 9)
    assert oracle.total_variation(exact, emp) < 0.05


def test_state_invariants_hold_every_sweep():
    rng = np.random.default_rng(6)
    xy = np.vstack([rng.normal([1, 1], 0.4, size=(60, 2)), rng.uniform(-5, 5, size=(120, 2))])
    e = pareto_sample(1.0, 1.0, rng, size=len(xy)).clip(max=300)
    model = build_model(np.clip(xy, -5, 5), e, BOUNDS, Hyperparameters(), GaussianPsf(), "joint")
    st = init_state(model, 7)
    for _ in range(40):
        gibbs_sweep(model, st)
        st.check(model)
        assert np.all(st.etas > 0)


def test_zero_proposal_width_always_accepts():
    rng = np.random.default_rng(8)
    xy = rng.normal(0, 0.1, size=(80, 2))
    model = build_model(xy, np.ones(80), BOUNDS, Hyperparameters(), GaussianPsf())
    model.prop_sd2 = 0.0
    _, st = run_chain(model, 30, seed=1)
    d = st.diagnostics()
    assert d["mh_proposed"] > 0 and d["mh_accepted"] == d["mh_proposed"]


def test_single_photon_location_posterior():
    x_i, energy = np.array([[4.5, 0.3]]), 1.0
    psf = GaussianPsf()
    lv = Level(SOURCE, psf.kind, psf.engine_conf(BOUNDS), 2.0, 5, psf.engine_aux([energy]),
               init_param=np.array([0.0, 0.0]))
    model = MixtureModel([lv], x_i, np.array([energy]))
    trace, _ = run_chain(model, 4000, seed=2)
    mx = np.array([m[0, 0] for m in trace.mus])
    # oracle: N(x_i; mu, s) / Z(mu) on a fine mu grid, marginalised over mu_y
    g = np.linspace(-5, 5, 1601)
    MX, MY = np.meshgrid(g, g, indexing="ij")
    post = psf.density(x_i[0, 0], x_i[0, 1], (MX, MY), energy, BOUNDS)
    cdf = np.cumsum(post.sum(axis=1))
    assert stats.kstest(mx, lambda q: np.interp(q, g, cdf / cdf[-1])).statistic < 0.05


def test_background_only_fit_recovers_density():
    rng = np.random.default_rng(10)
    truth = BackgroundComponent((-4.5, -2.0, 0.0, 1.0, 4.0), (-3.0, -1.0, 0.5, 2.0, 4.5))
    xy = truth.sample(rng, 500)
    model = build_model(xy, np.ones(500), BOUNDS, Hyperparameters(), model="background")
    trace, _ = run_chain(model, 800, seed=3, record_background=True)
    kept = trace.after_burn_in(0.5)
    g = np.linspace(-5, 5, 201)[:-1] + 0.025
    X, Y = np.meshgrid(g, g, indexing="ij")
    est = np.zeros_like(X)
    for comps, counts in zip(kept.bgs, kept.bg_counts):
        for theta, c in zip(comps, counts):
            est += c / 500 * bivariate_kernel(X, Y, BackgroundComponent.from_array(theta))
    est /= len(kept.bgs)
    l1 = np.sum(np.abs(est - bivariate_kernel(X, Y, truth))) * 0.05 ** 2
    assert l1 < 0.15


def test_spectral_interval_calibration():
    rng = np.random.default_rng(11)
    hits = 0
    for rep in range(50):
        e = pareto_sample(1.0, 1.0, rng, size=5000)
        xy = rng.uniform(-5, 5, size=(5000, 2))
        model = build_model(xy, e, BOUNDS, Hyperparameters(), GaussianPsf(), "joint")
        st = init_state(model, rep)
        set_levels(st, np.zeros(5000, dtype=int))
        draws = []
        for _ in range(400):
            update_spectral(model, st)
            draws.append(st.etas[0])
        lo, hi = np.quantile(draws, [0.025, 0.975])
        hits += lo <= 1.0 <= hi
    assert hits >= 45


def test_no_source_events_draws_eta_from_prior():
    xy = np.zeros((3, 2))
    model = build_model(xy, np.ones(3), BOUNDS, Hyperparameters(a_eta_s=4.0, b_eta_s=2.0),
                        GaussianPsf(), "joint")
    st = init_state(model, 12)
    draws = []
    for _ in range(20_000):
        update_spectral(model, st)
        draws.append(st.etas[0])
    assert np.mean(draws) == pytest.approx(2.0, rel=0.02)


def test_scaling_energies_keeps_level_probabilities():
    rng = np.random.default_rng(13)
    xy = rng.uniform(-3, 3, size=(30, 2))
    e = pareto_sample(1.0, 1.2, rng, size=30)
    psf = GaussianPsf(sigma_ref=0.0, sigma_floor=0.5)
    probs = []
    for c in (1.0, 7.0):
        b = MapBounds.square(5.0, e_min=c, e_max=1e6)
        model = build_model(xy, e * c, b, Hyperparameters(), psf, "joint")
        st = init_state(model, 14)
        set_levels(st, np.arange(30) % 2)
        st.params[0, 0, :2] = (0.5, 0.5)
        st.etas[:] = (1.1, 0.4)
        probs.append(level_probabilities(model, st, 3))
    assert np.allclose(probs[0], probs[1], rtol=1e-10)


def test_recover_weights_properties():
    rng = np.random.default_rng(15)
    deltas = [recover_weights([np.array([50]), np.array([50])], 1.0, [2.0, 1.5], rng)[0][0]
              for _ in range(4000)]
    assert np.mean(deltas) == pytest.approx(0.5, abs=0.01)
    _, w, tail = recover_weights([np.array([100]), np.array([3])], 1.0, [1e-9, 1.5], rng)
    assert w[0][0] > 0.999
    for _ in range(100):
        _, ws, tails = recover_weights([rng.integers(1, 20, 5), rng.integers(1, 9, 3)], 1.0,
                                       [2.0, 1.5], rng)
        for w, t in zip(ws, tails):
            assert t >= 0 and w.sum() + t == pytest.approx(1.0)


def test_zero_iterations_gives_empty_trace():
    model = build_model(np.zeros((2, 2)), np.ones(2), BOUNDS, Hyperparameters(), GaussianPsf())
    trace, st = run_chain(model, 0)
    assert len(trace) == 0 and st.sweeps == 0


def small_model():
    rng = np.random.default_rng(16)
    xy = np.vstack([rng.normal([2, -1], 0.3, size=(40, 2)), rng.uniform(-5, 5, size=(60, 2))])
    return build_model(np.clip(xy, -5, 5), np.ones(100), BOUNDS, Hyperparameters(), GaussianPsf())


def test_same_seed_identical_traces(tmp_path):
    model = small_model()
    for name in ("a", "b"):
        trace, _ = run_chain(model, 25, seed=9, record_background=True)
        write_trace(tmp_path / name, trace)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_resume_from_snapshot_matches(tmp_path):
    model = small_model()
    full, _ = run_chain(model, 30, seed=4)
    part, st = run_chain(model, 12, seed=4)
    st.to_npz(tmp_path / "s.npz")
    rest, _ = run_chain(model, 30, state=ChainState.from_npz(tmp_path / "s.npz"), trace=part)
    write_trace(tmp_path / "full", full)
    write_trace(tmp_path / "resumed", rest)
    assert (tmp_path / "full").read_bytes() == (tmp_path / "resumed").read_bytes()


def test_trace_round_trip(tmp_path):
    model = small_model()
    trace, _ = run_chain(model, 15, seed=5, thin=3, record_background=True)
    assert trace.iters == [3, 6, 9, 12, 15]
    write_trace(tmp_path / "t", trace)
    back = read_trace(tmp_path / "t")
    assert back.iters == trace.iters
    assert np.array_equal(back.k_s, trace.k_s) and np.array_equal(back.n_source, trace.n_source)
    for a, b in zip(back.mus, trace.mus):
        assert np.array_equal(a, b)
    for a, b in zip(back.bgs, trace.bgs):
        assert np.array_equal(a, b)
    assert all(np.allclose(a, b) for a, b in zip(back.source_weights(), trace.source_weights()))


@pytest.mark.slow
def test_no_background_data_leaves_little_background():
    rng = np.random.default_rng(17)
    xy = np.vstack([rng.normal(c, 0.35, size=(300, 2)) for c in ([-2, 1.5], [2.5, -1], [0.5, 3])])
    model = build_model(np.clip(xy, -5, 5), np.ones(len(xy)), BOUNDS, Hyperparameters(),
                        GaussianPsf(sigma_ref=0.0, sigma_floor=0.35))
    trace, _ = run_chain(model, 5000, seed=6)
    frac = trace.after_burn_in(0.75).n_background / model.n
    assert np.mean(frac < 0.05) > 0.5
