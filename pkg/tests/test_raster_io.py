"""ESRI ASCII grids, hydrographs and scenario configs."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mwflood.raster_io import (ConfigError, Hydrograph, Inflow, Raster, RasterFormatError,
                               ScenarioConfig, hydrograph_at, hydrograph_volume, read_ascii_grid,
                               read_config, read_hydrograph, write_ascii_grid, write_config,
                               write_hydrograph)

HEADER = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\nNODATA_value -9999\n"


def test_read_small_grid(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text(HEADER + "1 2\n3 4\n")
    r = read_ascii_grid(p)
    assert (r.ncols, r.nrows, r.cellsize) == (2, 2, 10.0)
    np.testing.assert_array_equal(r.values.ravel(), [1, 2, 3, 4])
    np.testing.assert_array_equal(r.south_up(), [[3, 4], [1, 2]])


def test_nodata_flagged(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text(HEADER + "1 -9999\n3 4\n")
    r = read_ascii_grid(p)
    np.testing.assert_array_equal(r.nodata_mask, [[False, True], [False, False]])


def test_header_case_insensitive(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text(HEADER.upper() + "1 2\n3 4\n")
    assert read_ascii_grid(p).values.shape == (2, 2)


def test_malformed_header_names_line(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text(HEADER.replace("cellsize 10", "cellsz 10") + "1 2\n3 4\n")
    with pytest.raises(RasterFormatError, match="line 5"):
        read_ascii_grid(p)


def test_value_count_mismatch(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text(HEADER + "1 2\n3\n")
    with pytest.raises(RasterFormatError, match="expected 4 values"):
        read_ascii_grid(p)


def test_write_zeros(tmp_path):
    p = tmp_path / "z.asc"
    write_ascii_grid(Raster(np.zeros((2, 3))), p)
    body = p.read_text().splitlines()[6:]
    assert body == ["0 0 0", "0 0 0"]


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)),
       st.floats(0.01, 1e3), st.floats(-1e5, 1e5))
def test_round_trip_is_lossless(tmp_path_factory, values, cellsize, xll):
    p = tmp_path_factory.mktemp("rt") / "r.asc"
    r = Raster(values, xll, -xll, cellsize)
    write_ascii_grid(r, p)
    back = read_ascii_grid(p)
    np.testing.assert_array_equal(back.values, r.values)
    assert (back.xll, back.yll, back.cellsize) == (r.xll, r.yll, r.cellsize)


def test_hydrograph_interpolation():
    hg = Hydrograph.from_samples([(0, 0), (3600, 3000)])
    assert hydrograph_at(hg, 1800) == 1500.0
    assert hydrograph_at(hg, -5) == 0.0
    assert hydrograph_at(hg, 3600) == 3000.0
    assert hydrograph_at(hg, 1e6) == 3000.0


def test_empty_hydrograph_rejected():
    with pytest.raises(ConfigError):
        hydrograph_at(Hydrograph.from_samples([]), 0.0)


def test_hydrograph_volume_exact():
    hg = Hydrograph(np.array([0.0, 10.0, 20.0]), np.array([0.0, 10.0, 0.0]))
    assert hydrograph_volume(hg, 0.0, 20.0) == 100.0
    assert hydrograph_volume(hg, 5.0, 15.0) == 75.0
    # clamped beyond the last sample
    assert hydrograph_volume(hg, 20.0, 30.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=8),
       st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_hydrograph_volume_additive(qs, a, b, c):
    hg = Hydrograph(np.arange(len(qs)) * 7.0, np.array(qs))
    t0, t1, t2 = sorted((a, b, c))
    whole = hydrograph_volume(hg, t0, t2)
    parts = hydrograph_volume(hg, t0, t1) + hydrograph_volume(hg, t1, t2)
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-9)


def test_hydrograph_file_round_trip(tmp_path):
    hg = Hydrograph(np.array([0.0, 0.1, 7.5]), np.array([1.0, 2.5, 0.0]))
    write_hydrograph(hg, tmp_path / "h.csv")
    back = read_hydrograph(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.times, hg.times)
    np.testing.assert_array_equal(back.discharges, hg.discharges)


def test_minimal_config_defaults(tmp_path):
    (tmp_path / "dem.asc").write_text(HEADER + "1 2\n3 4\n")
    (tmp_path / "c.cfg").write_text("dem_path = dem.asc\nsolver = fv1\nend_time = 10\n")
    cfg = read_config(tmp_path / "c.cfg")
    assert cfg.solver == "fv1" and cfg.end_time == 10.0
    assert cfg.epsilon == 1e-3
    assert cfg.dem_path == str(tmp_path / "dem.asc")


def test_adaptive_solver_needs_max_level(tmp_path):
    (tmp_path / "dem.asc").write_text(HEADER + "1 2\n3 4\n")
    (tmp_path / "c.cfg").write_text("dem_path = dem.asc\nsolver = mwdg2\nend_time = 10\n")
    with pytest.raises(ConfigError, match="max_level"):
        read_config(tmp_path / "c.cfg")


def test_config_lists_every_violation():
    cfg = ScenarioConfig(dem_path="", solver="dg2", end_time=1.0, epsilon=-1.0)
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    text = str(exc.value)
    assert "dem_path" in text and "epsilon" in text


def test_config_round_trip(tmp_path):
    (tmp_path / "dem.asc").write_text(HEADER + "1 2\n3 4\n")
    hg = Hydrograph(np.array([0.0, 5.0]), np.array([1.0, 2.0]))
    cfg = ScenarioConfig(dem_path=str(tmp_path / "dem.asc"), solver="acc", end_time=5.0,
                         max_level=1, manning=0.035, inflows=[Inflow(hg, 0, 0, 1, 1)],
                         gauges=[(5.0, 5.0)], output_interval=1.0)
    write_hydrograph(hg, tmp_path / "in.csv")
    write_config(cfg, tmp_path / "c.cfg", ["in.csv"])
    back = read_config(tmp_path / "c.cfg")
    assert (back.solver, back.end_time, back.max_level, back.manning) == ("acc", 5.0, 1, 0.035)
    assert back.gauges == [(5.0, 5.0)]
    inf = back.inflows[0]
    assert (inf.i0, inf.j0, inf.i1, inf.j1) == (0, 0, 1, 1)
    np.testing.assert_array_equal(inf.hydrograph.discharges, [1.0, 2.0])
