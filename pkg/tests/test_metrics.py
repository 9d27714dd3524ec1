"""Gauge RMSE, flood-extent scores and run-directory comparison."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mwflood.metrics import (GaugeSeries, MetricError, compare_runs, extent_metrics, gauge_series,
                             read_gauge_csv, rmse)
from mwflood.raster_io import Raster, write_ascii_grid

T3 = np.array([0.0, 1.0, 2.0])
GAUGE = "t,h,eta,u,v\n0,1,2,0.3,0.4\n1,1.5,2.5,0.6,0.8\n"


def test_rmse_hand_values():
    assert rmse(GaugeSeries("g", T3, [1, 2, 5]), GaugeSeries("g", T3, [1, 2, 3])) == np.sqrt(4 / 3)
    assert rmse(GaugeSeries("g", T3, [2, 3, 4]), GaugeSeries("g", T3, [1, 2, 3])) == 1.0


def test_rmse_interpolates_onto_reference_stamps():
    p = GaugeSeries("g", [0.0, 2.0], [0.0, 2.0])
    ref = GaugeSeries("g", [0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 2.0, 100.0])
    # t = 3 lies beyond the test series and is skipped
    assert rmse(p, ref) == 0.0


def test_rmse_errors():
    with pytest.raises(MetricError, match="no time overlap"):
        rmse(GaugeSeries("g", [5.0, 6.0], [1, 1]), GaugeSeries("g", T3, [1, 1, 1]))
    with pytest.raises(MetricError, match="empty"):
        rmse(GaugeSeries("g", [], []), GaugeSeries("g", T3, [1, 1, 1]))
    with pytest.raises(MetricError, match="strictly increasing"):
        GaugeSeries("g", [0.0, 0.0], [1, 2])


@settings(max_examples=100)
@given(arrays(np.float64, 6, elements=st.floats(-100, 100)),
       arrays(np.float64, 6, elements=st.floats(-100, 100)))
def test_rmse_is_symmetric_and_nonnegative(a, b):
    t = np.arange(6.0)
    ab = rmse(GaugeSeries("g", t, a), GaugeSeries("g", t, b))
    assert ab >= 0 and ab == pytest.approx(rmse(GaugeSeries("g", t, b), GaugeSeries("g", t, a)))
    assert rmse(GaugeSeries("g", t, a), GaugeSeries("g", t, a)) == 0.0


def test_extent_hand_case():
    ref = np.zeros((4, 4))
    ref[:2] = 1.0
    test = np.zeros((4, 4))
    test[0] = 1.0
    test[3, 0] = 1.0
    m = extent_metrics(Raster(test), Raster(ref))
    assert (m.hits, m.misses, m.false_alarms) == (4, 4, 1)
    assert (m.H, m.F, m.C) == (0.5, 0.2, 4 / 9)


def test_extent_threshold_and_nodata():
    ref = Raster(np.array([[0.02, 0.005, -9999.0]]))
    test = Raster(np.array([[0.01, 0.02, 5.0]]))
    m = extent_metrics(test, ref)
    assert (m.hits, m.misses, m.false_alarms) == (1, 0, 1)
    assert extent_metrics(test, ref, wet_threshold=0.015).hits == 0


def test_extent_empty_denominators():
    dry = Raster(np.zeros((3, 3)))
    m = extent_metrics(dry, dry)
    assert (m.H, m.F, m.C) == (1.0, 0.0, 1.0)


@settings(max_examples=100)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)),
       arrays(np.float64, (5, 5), elements=st.floats(0, 1)))
def test_extent_scores_bounded(a, b):
    m = extent_metrics(Raster(a), Raster(b), 0.5)
    assert 0 <= m.C <= min(m.H, 1 - m.F) + 1e-15
    assert 0 <= m.H <= 1 and 0 <= m.F <= 1


def test_geometry_mismatch_rejected():
    with pytest.raises(MetricError, match="geometry"):
        extent_metrics(Raster(np.zeros((2, 2))), Raster(np.zeros((2, 3))))
    with pytest.raises(MetricError):
        extent_metrics(Raster(np.zeros((2, 2)), cellsize=2.0), Raster(np.zeros((2, 2))))


def test_speed_and_repeated_stamps(tmp_path):
    p = tmp_path / "gauge_0.csv"
    p.write_text(GAUGE + "1,1.7,2.7,0.0,0.0\n")
    cols = read_gauge_csv(p)
    s = gauge_series(cols, "gauge_0", "speed")
    np.testing.assert_array_equal(s.t, [0.0, 1.0])
    np.testing.assert_allclose(s.values, [0.5, 0.0])
    np.testing.assert_array_equal(gauge_series(cols, "gauge_0", "h").values, [1.0, 1.7])


def _run_dir(path, gauges=(0,), depths=(0, 1)):
    path.mkdir()
    for g in gauges:
        (path / f"gauge_{g}.csv").write_text(GAUGE)
    for k in depths:
        write_ascii_grid(Raster(np.full((2, 2), 0.5)), path / f"depth_{k:04d}.asc")
    return str(path)


def test_compare_marks_missing_counterparts(tmp_path):
    a = _run_dir(tmp_path / "a", gauges=(0, 1))
    b = _run_dir(tmp_path / "b", gauges=(0,), depths=(0,))
    rep = compare_runs(a, b, out_dir=str(tmp_path / "rep"))
    assert rep.missing == ["depth_0001.asc", "gauge_1.csv"]
    absent = [var for gid, var, v in rep.rmse if v is None]
    assert len(absent) == 3 and all(gid == "gauge_1" for gid, _, v in rep.rmse if v is None)
    assert dict(rep.extent)["depth_0001"] is None
    text = (tmp_path / "rep" / "report.txt").read_text()
    assert "absent" in text and "Missing counterparts" in text
    rows = (tmp_path / "rep" / "report.csv").read_text().splitlines()
    assert rows[0] == "kind,id,values" and "rmse,gauge_1.h,absent" in rows


def test_compare_empty_directories(tmp_path):
    (tmp_path / "a").mkdir()
    b = _run_dir(tmp_path / "b")
    with pytest.raises(MetricError, match="nothing to compare"):
        compare_runs(str(tmp_path / "a"), b)
