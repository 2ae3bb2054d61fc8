"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

The quick criteria (1-6, 10) run in seconds to minutes; the end-to-end
criteria (7-9) replicate full simulations and are marked ``slow``.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from _scenarios import (N_REPLICATES, desk_config, desk_scenario, eta_interval, judge_recovery,
                        min_retained_sources, run_replicate)

from dpsource import verify
from dpsource.cli import main
from dpsource.domain import PhotonEvent, write_event_list

pytestmark = pytest.mark.acceptance

REPLICATE_SEEDS = [101, 102, 103, 104, 105]
REQUIRED_REPLICATES = 4
PROP_SD2 = 0.001
ACCEPTANCE_BAND = (0.2, 0.6)


def _log(log, n: int, ok: bool, text: str) -> None:
    log[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} {text}"
    print(log[n])


def _timed(check, *args):
    t0 = time.perf_counter()
    res = check(*args)
    return res, time.perf_counter() - t0


def test_criterion_1_variance_formula(acceptance_log):
    res, dt = _timed(verify.check_variance_formula)
    ok = res.passed and dt < 10
    _log(acceptance_log, 1, ok, f"max |formula - quadrature| = {res.value:.2e} (< 1e-8), {dt:.1f}s")
    assert ok


def test_criterion_2_normalization(acceptance_log):
    res, dt = _timed(verify.check_normalization)
    ok = res.passed and dt < 30
    _log(acceptance_log, 2, ok, f"max |integral - 1| = {res.value:.2e} (< 1e-6), {dt:.1f}s")
    assert ok


def test_criterion_3_conjugacy(acceptance_log):
    res = verify.check_conjugacy()
    _log(acceptance_log, 3, res.passed, f"max deviation = {res.value:.1e}")
    assert res.passed


def test_criterion_4_knot_sampler(acceptance_log):
    res, dt = _timed(verify.check_knot_sampler, 10_000)
    p = 0.01 / res.value
    ok = p > 0.01 and dt < 60
    _log(acceptance_log, 4, ok, f"chi-square p = {p:.3f} (> 0.01), {dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_5_micro_instance(acceptance_log):
    res, dt = _timed(verify.check_micro_instance, 200_000)
    ok = res.passed and dt < 300
    _log(acceptance_log, 5, ok, f"TV = {res.value:.4f} (< 0.05), {dt:.1f}s")
    assert ok


def test_criterion_6_prior_source_count(acceptance_log):
    (enum, mc), dt = _timed(verify.check_crp)
    ok = enum.passed and mc.passed and dt < 60
    _log(acceptance_log, 6, ok, f"|E[k_s] - 16| = {mc.value:.3f} (< 1.5), {dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    cfg = desk_config()
    t0 = time.perf_counter()
    outs = [run_replicate(tmp_path_factory.mktemp(f"desk{s}"), desk_scenario(300, 2000, s),
                          desk_config(seed=s))
            for s in REPLICATE_SEEDS[:N_REPLICATES]]
    return outs, cfg, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_desk_recovery(desk_runs, acceptance_log):
    outs, cfg, dt = desk_runs
    verdicts = [judge_recovery(o, cfg.p_star) for o in outs]
    for _, text in verdicts:
        print(text)
    n_ok = sum(ok for ok, _ in verdicts)
    k_min = min(min_retained_sources(o, cfg.burn_in_fraction) for o in outs)
    ok = n_ok >= REQUIRED_REPLICATES and k_min >= 3
    _log(acceptance_log, 7, ok, f"{n_ok}/5 replicates recovered (need 4), min retained k_s = "
         f"{k_min} (need >= 3), {dt / 60:.1f} min")
    assert ok


@pytest.fixture(scope="module")
def spectral_runs(tmp_path_factory):
    t0 = time.perf_counter()
    outs = []
    for s in REPLICATE_SEEDS[:N_REPLICATES]:
        cfg = desk_config(model="joint", chains=2, iterations=2000, seed=s)
        o = run_replicate(tmp_path_factory.mktemp(f"joint{s}"), desk_scenario(1000, 2000, s), cfg)
        o.extra["eta"] = eta_interval(o, cfg.burn_in_fraction)
        outs.append(o)
    return outs, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_8_spectral_recovery(spectral_runs, acceptance_log):
    outs, dt = spectral_runs
    hits = 0
    for o in outs:
        (lo, hi), mean = o.extra["eta"]
        hits += lo <= 1.0 <= hi
        print(f"seed {o.seed}: eta_s mean {mean:.3f}, 95% HPD ({lo:.3f}, {hi:.3f})")
    ok = hits >= REQUIRED_REPLICATES
    _log(acceptance_log, 8, ok, f"eta_s HPD contains 1.0 in {hits}/5 (need 4), {dt / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_9_mh_acceptance(spectral_runs, acceptance_log):
    outs, _ = spectral_runs
    acc = sum(c["mh_accepted"] for o in outs for c in o.chain_info)
    prop = sum(c["mh_proposed"] for o in outs for c in o.chain_info)
    b_acc = sum(c["mh_bright_accepted"] for o in outs for c in o.chain_info)
    b_prop = sum(c["mh_bright_proposed"] for o in outs for c in o.chain_info)
    rate = acc / prop
    ok = ACCEPTANCE_BAND[0] <= rate <= ACCEPTANCE_BAND[1]
    _log(acceptance_log, 9, ok, f"MH acceptance {rate:.3f} in [0.2, 0.6] at ~1e3 photons/source "
         f"(clusters >= 100 photons: {b_acc / b_prop:.3f})")
    assert ok


def test_criterion_10_determinism(tmp_path, acceptance_log):
    rng = np.random.default_rng(7)
    events = tmp_path / "events.csv"
    write_event_list(events, [PhotonEvent(x, y, e) for x, y, e in zip(
        rng.uniform(-5, 5, 120), rng.uniform(-5, 5, 120), 1.0 / rng.uniform(0.01, 1.0, 120))])
    args = ["--seed", "11", "--chains", "2", "--iterations", "40", "--workers", "1"]
    assert main(["fit", str(events), "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["fit", str(events), "--out", str(tmp_path / "b"), *args]) == 0
    same = all((tmp_path / "a" / f"chain_{c}.trace").read_bytes()
               == (tmp_path / "b" / f"chain_{c}.trace").read_bytes() for c in range(2))
    _log(acceptance_log, 10, same, "two fits with seed 11 give byte-identical traces")
    assert same
