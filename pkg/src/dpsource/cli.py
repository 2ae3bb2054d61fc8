"""Command-line entry points: simulate, fit, postprocess, verify, tune-smoothness."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bspline import knot_variance
from .domain import (GridSpec, PixelGrid, RunConfig, ValidationError, events_to_arrays,
                     read_event_list, read_grid, write_event_list, write_grid)
from .postprocess import analyze, posterior_background_map, write_region_report
from .psf import GaussianPsf, containment_radius, read_psf_table
from .sampler import (ChainState, Trace, build_model, read_trace, run_chain, write_trace)
from .simulator import read_scenario, simulate, write_truth

log = logging.getLogger("dpsource")

CONFIG_SNAPSHOT = "config.snapshot"
DEFAULT_CHECKPOINT = 500
TUNE_PERCENTILE = 20.0


def load_config(path=None, **overrides) -> RunConfig:
    """Config file (if any) with non-None keyword overrides applied."""
    cfg = RunConfig.from_file(path) if path else RunConfig()
    kw = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg


def psf_from_config(cfg: RunConfig, base: Path | None = None):
    if cfg.psf_table:
        p = Path(cfg.psf_table)
        if not p.is_absolute() and base is not None:
            p = base / p
        if not p.exists():
            raise ValidationError(f"PSF table not found: {p}")
        return read_psf_table(p)
    return GaussianPsf(cfg.psf_sigma_ref, cfg.psf_e_ref, cfg.psf_index, cfg.psf_sigma_floor)


def chain_seeds(seed: int, chains: int) -> list[int]:
    """Independent per-chain seeds derived from one invocation seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(chains)]


def _chain_paths(out: Path, c: int) -> tuple[Path, Path]:
    return out / f"chain_{c}.trace", out / f"chain_{c}.state.npz"


def _run_chain_job(job) -> dict:
    events_path, cfg_text, c, seed, out, resume, checkpoint = job
    cfg_file = Path(out) / CONFIG_SNAPSHOT
    cfg = RunConfig.from_file(cfg_file) if cfg_text is None else _config_from_text(cfg_text)
    model = _model_for(events_path, cfg)
    trace_path, state_path = _chain_paths(Path(out), c)
    state = None
    if resume and state_path.exists() and trace_path.exists():
        state = ChainState.from_npz(state_path)
        truncate_trace(trace_path, state.sweeps)
    elif resume:
        log.info("chain %d: no snapshot, starting fresh", c)
    if state is None:
        trace = Trace(model.names, model.n)
        write_trace(trace_path, trace)
    while True:
        done = state.sweeps if state is not None else 0
        target = min(cfg.iterations, (done // checkpoint + 1) * checkpoint)
        segment = Trace(model.names, model.n)
        segment, state = run_chain(model, target, seed, cfg.thin, cfg.record_background,
                                   state=state, trace=segment)
        write_trace(trace_path, segment, append=True)
        state.to_npz(state_path)
        if state.sweeps >= cfg.iterations:
            break
    return {"chain": c, "sweeps": state.sweeps, **state.diagnostics()}


def truncate_trace(path, last_iter: int) -> None:
    """Drop records after iteration ``last_iter`` (left by an interrupted run)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines(keepends=True)
    for q, ln in enumerate(lines):
        if ln.startswith("iter ") and int(ln.split()[1]) > last_iter:
            Path(path).write_text("".join(lines[:q]), encoding="utf-8")
            return


def _config_from_text(text: str) -> RunConfig:
    from .domain import parse_keyvalue
    top, _ = parse_keyvalue(text, CONFIG_SNAPSHOT)
    return RunConfig.from_mapping(top)


def _model_for(events_path, cfg: RunConfig):
    events = read_event_list(events_path, cfg.bounds)
    if not events:
        raise ValidationError(f"{events_path}: no events")
    xy, e = events_to_arrays(events)
    psf = None if cfg.model == "background" else psf_from_config(cfg, Path(events_path).parent)
    return build_model(xy, e, cfg.bounds, cfg.hyper, psf, cfg.model, cfg.aux_mode, cfg.scan)


def fit(events_path, cfg: RunConfig, out, resume: bool = False,
        checkpoint: int = DEFAULT_CHECKPOINT, workers: int | None = None) -> list[dict]:
    """Run ``cfg.chains`` chains concurrently, writing traces and snapshots to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if checkpoint < 1:
        raise ValidationError("checkpoint interval must be >= 1")
    _model_for(events_path, cfg)  # fail early on bad input
    (out / CONFIG_SNAPSHOT).write_text(cfg.to_text(), encoding="utf-8")
    jobs = [(str(events_path), cfg.to_text(), c, s, str(out), resume, checkpoint)
            for c, s in enumerate(chain_seeds(cfg.seed, cfg.chains))]
    if cfg.chains == 1 or workers == 1:
        return [_run_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers or cfg.chains) as pool:
        return list(pool.map(_run_chain_job, jobs))


def load_run(run_dir) -> tuple[RunConfig | None, list[Trace]]:
    run_dir = Path(run_dir)
    cfg = None
    if (run_dir / CONFIG_SNAPSHOT).exists():
        cfg = RunConfig.from_file(run_dir / CONFIG_SNAPSHOT)
    paths = sorted(run_dir.glob("chain_*.trace"), key=lambda p: int(p.stem.split("_")[1]))
    return cfg, [read_trace(p) for p in paths]


def postprocess(run_dir, cfg: RunConfig, out=None, seed: int | None = None):
    """Regions and background map for a finished run directory."""
    run_dir = Path(run_dir)
    out = Path(out) if out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    _, traces = load_run(run_dir)
    if not traces or sum(len(t) for t in traces) == 0:
        raise ValidationError(f"{run_dir}: no trace records")
    spec = GridSpec(cfg.bounds, cfg.pixel_size)
    report = analyze(traces, spec, cfg.burn_in_fraction, cfg.p_star, cfg.d_r)
    write_region_report(out / "regions.csv", report)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    bg = posterior_background_map(traces, spec, rng, cfg.burn_in_fraction)
    write_grid(out / "background.grid", bg)
    return report, bg


def template_events(grid: PixelGrid, n_events: int | None, rng) -> np.ndarray:
    """Poisson counts from a template of expected counts, one event per
    count at its pixel centre, optionally rescaled to about ``n_events``."""
    lam = np.asarray(grid.counts, dtype=float)
    if np.any(lam < 0) or lam.sum() <= 0:
        raise ValidationError("template must be non-negative with positive total")
    if n_events:
        lam = lam * (n_events / lam.sum())
    counts = rng.poisson(lam)
    u, v = np.nonzero(counts)
    reps = counts[u, v]
    xc, yc = grid.spec.x_centers(), grid.spec.y_centers()
    return np.column_stack([np.repeat(xc[u], reps), np.repeat(yc[v], reps)])


def tune_smoothness(template: PixelGrid, cfg: RunConfig, iterations: int = 400,
                    n_events: int | None = 2000, floor: float = 0.0,
                    seed: int | None = None) -> tuple[float, float]:
    """Smoothness floors from a background-only fit to a simulated template.

    Returns the given percentile of the knot standard deviation per axis over
    all background components of the retained iterations.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    xy = template_events(template, n_events, rng)
    hyper = replace(cfg.hyper, c_ell=floor, c_b=floor)
    model = build_model(xy, np.full(len(xy), template.bounds.e_min), template.bounds, hyper,
                        model="background")
    trace, _ = run_chain(model, iterations, int(rng.integers(2 ** 32)), record_background=True)
    kept = trace.after_burn_in(cfg.burn_in_fraction)
    sd_l = [np.sqrt(knot_variance(t[:5], 4)) for comps in kept.bgs for t in comps]
    sd_b = [np.sqrt(knot_variance(t[5:], 4)) for comps in kept.bgs for t in comps]
    return (float(np.percentile(sd_l, TUNE_PERCENTILE)),
            float(np.percentile(sd_b, TUNE_PERCENTILE)))


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

def _add_common(p, *names):
    opts = {
        "config": dict(help="key = value run configuration file"),
        "seed": dict(type=int, help="seed for all randomness of this invocation"),
        "chains": dict(type=int, help="number of chains"),
        "iterations": dict(type=int, help="sweeps per chain"),
        "burn-in": dict(type=float, dest="burn_in", help="fraction of each chain discarded"),
        "model": dict(choices=["spatial", "joint"], help="model variant"),
        "pixel-size": dict(type=float, dest="pixel_size", help="post-processing pixel (deg)"),
        "p-star": dict(type=float, dest="p_star", help="target presence probability"),
        "d-r": dict(type=int, dest="d_r", help="region window width in pixels"),
    }
    for n in names:
        p.add_argument(f"--{n}", **opts[n])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpsource", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an event list with truth labels")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", help="run the sampler chains")
    p.add_argument("events")
    p.add_argument("--out", required=True, help="run directory")
    _add_common(p, "config", "seed", "chains", "iterations", "burn-in", "model")
    p.add_argument("--resume", action="store_true", help="continue from saved snapshots")
    p.add_argument("--checkpoint", type=int, default=DEFAULT_CHECKPOINT,
                   help="sweeps between trace flushes and snapshots")
    p.add_argument("--workers", type=int, help="processes (default: one per chain)")

    p = sub.add_parser("postprocess", help="regions and background map from a run")
    p.add_argument("run_dir")
    p.add_argument("--out", help="output directory (default: the run directory)")
    _add_common(p, "config", "seed", "burn-in", "pixel-size", "p-star", "d-r")

    p = sub.add_parser("verify", help="run the numerical self-checks")
    p.add_argument("--tolerance-scale", type=float, default=1.0,
                   help="multiply every tolerance (values <= 0 force failures)")
    p.add_argument("--quick", action="store_true", help="fewer Monte Carlo draws")

    p = sub.add_parser("tune-smoothness", help="recommend background smoothness floors")
    p.add_argument("template", help="background template grid of expected counts")
    _add_common(p, "config", "seed", "iterations", "burn-in")
    p.add_argument("--n-events", type=int, default=2000)
    p.add_argument("--floor", type=float, default=0.0, help="floor used during the fit")
    p.add_argument("--from-psf", action="store_true",
                   help="use the 68%% containment radius at the minimum energy instead")
    return ap


def _cmd_simulate(a) -> int:
    sc = read_scenario(a.scenario)
    if a.seed is not None:
        sc = replace(sc, seed=a.seed)
    res = simulate(sc)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_event_list(out / "events.csv", res.events())
    write_truth(out / "truth.csv", res.origin_labels())
    print(f"{len(res.energy)} events written to {out / 'events.csv'}")
    return 0


def _cmd_fit(a) -> int:
    cfg = load_config(a.config, seed=a.seed, chains=a.chains, iterations=a.iterations,
                      burn_in_fraction=a.burn_in, model=a.model)
    for r in fit(a.events, cfg, a.out, a.resume, a.checkpoint, a.workers):
        print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                       for k, v in r.items()))
    return 0


def _cmd_postprocess(a) -> int:
    cfg_path = a.config or (Path(a.run_dir) / CONFIG_SNAPSHOT)
    cfg = load_config(cfg_path if Path(cfg_path).exists() else None, burn_in_fraction=a.burn_in,
                      pixel_size=a.pixel_size, p_star=a.p_star, d_r=a.d_r)
    report, _ = postprocess(a.run_dir, cfg, a.out, a.seed)
    print(f"k* = {report.k_star}, regions = {len(report.regions)}"
          + (" (fewer local maxima than k*)" if report.shortfall else ""))
    for r in report.regions:
        print(f"region {r.id}: presence {r.presence_prob:.3f} at "
              f"({r.centroid[0]:.3f}, {r.centroid[1]:.3f}), {len(r.pixels)} pixels")
    return 0


def _cmd_verify(a) -> int:
    from .verify import run_checks
    results = run_checks(a.tolerance_scale, a.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def _cmd_tune(a) -> int:
    cfg = load_config(a.config, seed=a.seed, burn_in_fraction=a.burn_in)
    if a.from_psf:
        c = containment_radius(cfg.e_min, psf_from_config(cfg), 0.68)
        c_ell = c_b = c
    else:
        template = read_grid(a.template, cfg.e_min, cfg.e_max)
        c_ell, c_b = tune_smoothness(template, cfg, a.iterations or 400, a.n_events, a.floor)
    print(f"c_ell = {c_ell:.6g}")
    print(f"c_b = {c_b:.6g}")
    return 0


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "postprocess": _cmd_postprocess,
            "verify": _cmd_verify, "tune-smoothness": _cmd_tune}


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[a.command](a)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
