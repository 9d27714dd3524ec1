"""Synthetic scenario generators and the exact dam-break solution."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwflood import scenarios as sc
from mwflood.raster_io import read_ascii_grid, read_config

# star state for h_left = 1, h_right = 0.5, solved independently at 40 digits
STAR_H = 0.726920446187286408922392170019
STAR_U = 0.923206229541019


def test_stoker_star_state():
    x = np.array([0.5])
    h, u = sc.stoker_solution(x, 1.0)
    assert h[0] == pytest.approx(STAR_H, rel=1e-13)
    assert u[0] == pytest.approx(STAR_U, rel=1e-12)


def test_stoker_regions():
    h, u = sc.stoker_solution(np.array([-5.0, 5.0]), 1.0)
    np.testing.assert_array_equal(h, [1.0, 0.5])
    np.testing.assert_array_equal(u, [0.0, 0.0])
    h0, _ = sc.stoker_solution(np.array([-0.1, 0.1]), 0.0)
    np.testing.assert_array_equal(h0, [1.0, 0.5])


def test_stoker_equal_depths_is_still():
    h, u = sc.stoker_solution(np.linspace(-3, 3, 7), 2.0, 0.8, 0.8)
    assert np.all(h == 0.8) and np.all(u == 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.05, 0.95))
def test_stoker_conserves_mass_and_mirrors(h_left, ratio):
    h_right = ratio * h_left
    x = np.linspace(-50, 50, 20001)
    t = 2.0
    h, u = sc.stoker_solution(x, t, h_left, h_right)
    # inside the undisturbed far field, volume change equals the net flux, which is zero
    dx = x[1] - x[0]
    initial = np.where(x < 0, h_left, h_right)
    assert abs(np.sum(h - initial) * dx) <= 2 * h_left * dx
    assert np.all(h >= min(h_left, h_right) - 1e-12) and np.all(h <= h_left + 1e-12)
    hm, um = sc.stoker_solution(-x, t, h_right, h_left)
    np.testing.assert_allclose(hm, h, rtol=1e-12)
    np.testing.assert_allclose(um, -u, rtol=1e-12, atol=1e-14)


def test_valley_shape_and_forcing():
    scen = sc.make_valley()
    assert scen.dem.values.shape == (33, 129)
    cfg = scen.config
    assert cfg.boundaries["east"] == "open" and cfg.boundaries["west"] == "reflective"
    assert len(cfg.gauges) == 3 and cfg.max_level == 5
    hg = scen.extras["hydrograph"]
    assert hg.discharges.max() == 60.0
    z = scen.dem.south_up()
    # downhill to the east along the thalweg and higher on the banks
    assert z[16, 0] > z[16, -1] and z[0, 64] > z[16, 64]


def test_lake_surface_above_bed():
    scen = sc.make_lake_at_rest(seed=5)
    assert scen.extras["eta"] > scen.dem.values.max()
    island = sc.make_lake_at_rest(seed=5, island=True)
    assert island.dem.values.max() > island.extras["eta"]


def test_dambreak_validation():
    with pytest.raises(ValueError):
        sc.make_dambreak_1d(cells=1)
    scen = sc.make_dambreak_1d(cells=10, closed=True)
    assert set(scen.config.boundaries.values()) == {"reflective"}


def test_generators_are_deterministic():
    a, b = sc.make_lake_at_rest(seed=3), sc.make_lake_at_rest(seed=3)
    np.testing.assert_array_equal(a.dem.values, b.dem.values)


@pytest.mark.parametrize("name", sorted(sc.SCENARIOS))
def test_emit_round_trip(tmp_path, name):
    scen = sc.SCENARIOS[name]()
    path = sc.emit(scen, str(tmp_path), solver="fv1")
    cfg = read_config(path)
    assert cfg.solver == "fv1"
    np.testing.assert_array_equal(read_ascii_grid(cfg.dem_path).values, scen.dem.values)
    assert cfg.boundaries == scen.config.boundaries
    assert len(cfg.inflows) == len(scen.config.inflows)
    if scen.initial_depth is not None:
        assert cfg.initial_depth_path is not None
    mat = sc.materialize(scen, str(tmp_path / "m"), end_time=3.0)
    assert mat.end_time == 3.0 and mat.output_dir.endswith("output")
