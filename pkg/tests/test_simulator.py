import numpy as np
import pytest

from dpsource.domain import GridSpec, MapBounds, PixelGrid, ValidationError, write_grid
from dpsource.simulator import (DEFAULT_EXPOSURE, SimScenario, SourceSpec, counts_to_events,
                                default_energy_edges, energy_centroids, flat_background_map,
                                read_scenario, read_truth, simulate, simulate_counts,
                                source_cube, thin_events, write_truth)

GRID = GridSpec(MapBounds.square(5.0, 1.0, 10 ** 2.5), 0.05)


def central(f0=1e-9, **kw):
    return SimScenario([SourceSpec(0.0, 0.0, f0, 2.0)], GRID, **kw)


def test_default_edges():
    e = default_energy_edges()
    assert len(e) == 26 and e[0] == 1.0 and e[-1] == pytest.approx(10 ** 2.5)
    assert energy_centroids(e)[0] == pytest.approx(10 ** 0.05)


def test_zero_amplitude_gives_zero_expectation():
    assert not source_cube(central(0.0), 0).any()


def test_exposure_linearity():
    sc = central()
    doubled = central(exposure=2 * sc.exposure)
    assert np.allclose(source_cube(doubled, 0), 2 * source_cube(sc, 0))


def test_central_source_total():
    sc = central()
    ez = energy_centroids(sc.energy_edges)
    expected = 1e-9 * np.sum(ez ** -2.0 * sc.exposure)
    assert source_cube(sc, 0).sum() == pytest.approx(expected, rel=0.01)


def test_default_exposure_scales_with_bin_width():
    sc = central()
    assert np.allclose(sc.exposure, DEFAULT_EXPOSURE * np.diff(sc.energy_edges))


def test_zero_expectation_gives_zero_counts():
    sc = central(0.0)
    assert simulate_counts(sc, np.random.default_rng(0)).counts.sum() == 0


def test_poisson_totals():
    grid = GridSpec(MapBounds.square(2.0, 1.0, 10 ** 2.5), 0.1)
    sc = SimScenario([SourceSpec(0.0, 0.0, 2e-10, 2.0)], grid,
                     background_map=flat_background_map(grid, 300.0))
    mean = source_cube(sc, 0).sum() + 300.0
    rng = np.random.default_rng(1)
    totals = np.array([simulate_counts(sc, rng).counts.sum() for _ in range(100)])
    assert abs(totals.mean() - mean) < 4 * np.sqrt(mean / 100)
    assert totals.var() == pytest.approx(mean, rel=0.35)


def test_nine_source_sky():
    locs = [(x, y) for x in (-3, 0, 3) for y in (-3, 0, 3)]
    sc = SimScenario([SourceSpec(x, y, 1e-9, 2.0) for x, y in locs], GRID,
                     background_map=flat_background_map(GRID, 25_000.0))
    mean = sum(source_cube(sc, s).sum() for s in range(9)) + 25_000.0
    res = simulate(sc, np.random.default_rng(2))
    assert abs(len(res.energy) - mean) < 3 * np.sqrt(mean)
    assert np.all(np.abs(res.xy) <= 5.0)
    assert set(res.origin_labels()) == {f"source_{k}" for k in range(9)} | {"background"}


def test_counts_to_events_at_centroids():
    grid = GridSpec(MapBounds.square(1.0), 1.0)
    counts = np.zeros((2, 2, 25), dtype=int)
    counts[1, 0, 0] = 3
    ev = counts_to_events(counts, grid, default_energy_edges())
    assert len(ev) == 3
    assert all(e.x == 0.5 and e.y == -0.5 and e.energy == pytest.approx(10 ** 0.05) for e in ev)


def test_thin_events():
    rng = np.random.default_rng(3)
    x = np.arange(10_000)
    lab = (x % 4 == 0).astype(int)
    assert np.array_equal(thin_events(x, 10_000, rng), x)
    assert len(thin_events(x, 0, rng)) == 0
    with pytest.raises(ValidationError):
        thin_events(x, 10_001, rng)
    picked, plab = thin_events(x, 4000, rng, lab)
    assert np.all(np.diff(picked) > 0) and np.array_equal(plab, lab[picked])
    assert plab.mean() == pytest.approx(0.25, abs=0.02)


def test_thinned_simulation_size():
    sc = central(thin_to=50, background_map=flat_background_map(GRID, 500.0))
    assert len(simulate(sc, np.random.default_rng(4)).energy) == 50


def test_read_scenario(tmp_path):
    grid = GridSpec(MapBounds.square(1.0, 1.0, 10 ** 2.5), 0.5)
    write_grid(tmp_path / "bg.txt", PixelGrid(grid, np.ones(grid.shape, dtype=int)))
    (tmp_path / "s.txt").write_text(
        "x_min = -1\nx_max = 1\ny_min = -1\ny_max = 1\npixel_size = 0.5\n"
        "background_template = bg.txt\nseed = 9\n\n"
        "[[source]]\nx = 0.1\ny = -0.2\nf0 = 1e-9\nrho = 2\n")
    sc = read_scenario(tmp_path / "s.txt")
    assert sc.sources == [SourceSpec(0.1, -0.2, 1e-9, 2.0)]
    assert sc.seed == 9 and sc.background_map.sum() == 16


def test_missing_template(tmp_path):
    (tmp_path / "s.txt").write_text("background_template = nowhere.txt\n")
    with pytest.raises(ValidationError, match="not found"):
        read_scenario(tmp_path / "s.txt")


def test_unknown_scenario_key(tmp_path):
    (tmp_path / "s.txt").write_text("colour = blue\n")
    with pytest.raises(ValidationError, match="colour"):
        read_scenario(tmp_path / "s.txt")


def test_truth_round_trip(tmp_path):
    labs = ["source_0", "background", "source_1"]
    write_truth(tmp_path / "t.csv", labs)
    assert read_truth(tmp_path / "t.csv") == labs
