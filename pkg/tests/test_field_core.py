"""Planar projection of vertex samples onto elements."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwflood.field_core import (evaluate, face_limit, project_raster, project_vertex_grid,
                                project_vertices)
from mwflood.raster_io import ConfigError, Raster

SLOPE_UNIT = 1 / (2 * np.sqrt(3))          # 0.28867513459481287

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_constant_vertices():
    assert project_vertices(2.5, 2.5, 2.5, 2.5) == (2.5, 0.0, 0.0)


def test_east_and_north_ramps():
    c = project_vertices(0.0, 1.0, 0.0, 1.0)          # NE = SE = 1
    assert c[0] == 0.5
    assert c[1] == pytest.approx(0.288675134594813, abs=1e-15)
    assert c[2] == 0.0
    c = project_vertices(1.0, 1.0, 0.0, 0.0)          # NE = NW = 1
    assert (c[0], c[1]) == (0.5, 0.0)
    assert c[2] == pytest.approx(SLOPE_UNIT, abs=1e-15)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        project_vertices(np.nan, 0, 0, 0)


def test_evaluate_centre_and_face():
    c = project_vertices(0.0, 1.0, 0.0, 1.0)
    assert evaluate(c, (3.0, 4.0), 2.0, (3.0, 4.0)) == c[0]
    assert evaluate(c, (3.0, 4.0), 2.0, (4.0, 4.0)) == pytest.approx(1.0, abs=1e-15)
    assert face_limit(c, "E") == pytest.approx(1.0, abs=1e-15)
    assert face_limit(c, "W") == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        evaluate(c, (0, 0), 0.0, (0, 0))


def test_face_limit_basis_values():
    assert all(face_limit((1.0, 0.0, 0.0), f) == 1.0 for f in "NESW")
    assert face_limit((0.0, 1.0, 0.0), "E") == pytest.approx(np.sqrt(3))
    assert face_limit((0.0, 0.0, 1.0), "S") == pytest.approx(-np.sqrt(3))
    with pytest.raises(ValueError):
        face_limit((0, 0, 0), "X")


@settings(max_examples=100)
@given(finite, finite, finite, st.floats(0.1, 100))
def test_planar_vertices_reproduced_at_corners(a, sx, sy, R):
    # a plane sampled at the corners of an element of size R is recovered exactly
    z = {(dx, dy): a + sx * dx * R + sy * dy * R for dx in (0, 1) for dy in (0, 1)}
    c = project_vertices(z[0, 1], z[1, 1], z[0, 0], z[1, 0])
    centre = (0.5 * R, 0.5 * R)
    for (dx, dy), val in z.items():
        assert evaluate(c, centre, R, (dx * R, dy * R)) == pytest.approx(val, abs=1e-9 * (1 + abs(val)))


@settings(max_examples=60)
@given(st.lists(finite, min_size=4, max_size=4))
def test_projection_is_the_mean_and_linear(v):
    c = project_vertices(*v)
    assert c[0] == pytest.approx(np.mean(v), abs=1e-9)
    c2 = project_vertices(*(2 * x for x in v))
    np.testing.assert_allclose(np.array(c2), 2 * np.array(c), atol=1e-9)


def test_linear_dem_slopes():
    s, R = 0.01, 5.0
    x = np.arange(9) * R
    verts = np.tile(s * x, (5, 1))
    c = project_vertex_grid(verts)
    np.testing.assert_allclose(c[1], s * R * SLOPE_UNIT, rtol=1e-12)
    np.testing.assert_array_equal(c[2], 0.0)


def test_checkerboard_slopes_alternate():
    verts = (np.indices((5, 5)).sum(axis=0) % 2).astype(float)
    c = project_vertex_grid(verts)
    # corners alternate, so every element is a saddle: zero planar slopes
    np.testing.assert_allclose(c[1:], 0.0, atol=1e-15)
    stripes = np.tile(np.arange(5) % 2, (5, 1)).astype(float)
    c = project_vertex_grid(stripes)
    np.testing.assert_allclose(np.abs(c[1]), SLOPE_UNIT, rtol=1e-14)
    assert np.all(c[1, :, :-1] * c[1, :, 1:] < 0)


def test_project_raster_pads_and_flags():
    dem = Raster.from_south_up(np.zeros((6, 4)), cellsize=2.0)   # 5 x 3 elements
    f = project_raster(dem, L=2)
    assert f.shape == (8, 4) and (f.M, f.N) == (1, 2)
    assert f.active.sum() == 15
    assert not f.active[5:].any() and not f.active[:, 3:].any()
    with pytest.raises(ConfigError):
        project_raster(dem, L=-1)
