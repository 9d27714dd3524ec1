"""Multiresolution encoding, detail trees and static grid generation."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mwflood.field_core import evaluate, project_vertex_grid, project_vertices
from mwflood.mra import (assemble_grid, build_detail_tree, build_filters, decode, decode_level,
                         encode, encode_level, flag_significant, generate_static_grid,
                         normalize_detail)
from mwflood.quadgrid import full_flags, is_graded
from mwflood.raster_io import Raster
from mwflood.scenarios import make_valley

# child storage order: SW, SE, NW, NE
OFFSETS = [(-1, -1), (1, -1), (-1, 1), (1, 1)]


@pytest.mark.parametrize("kind", ["mw", "hw"])
def test_filters_orthogonal(kind):
    fb = build_filters(kind)
    n = 4 * fb.ncoef
    np.testing.assert_allclose(fb.dec @ fb.enc, np.eye(n), atol=1e-14)
    np.testing.assert_allclose(fb.enc @ fb.dec, np.eye(n), atol=1e-14)
    np.testing.assert_allclose(fb.dec, 4 * fb.enc.T, atol=0)


def test_unknown_kind():
    with pytest.raises(ValueError):
        build_filters("db4")


def test_constant_children():
    parent, details = encode([[2.0, 0, 0]] * 4, build_filters("mw"))
    np.testing.assert_allclose(parent, [2.0, 0, 0], atol=1e-15)
    assert all(np.abs(d).max() < 1e-15 for d in details)


def test_planar_children_have_zero_details():
    # children of one 2x2 block sampled from the plane z = 1 + 0.3x - 0.7y
    plane = lambda x, y: 1 + 0.3 * x - 0.7 * y
    kids = []
    for sx, sy in OFFSETS:
        x0, y0 = (sx + 1) / 2, (sy + 1) / 2
        kids.append(project_vertices(plane(x0, y0 + 1), plane(x0 + 1, y0 + 1),
                                     plane(x0, y0), plane(x0 + 1, y0)))
    parent, details = encode(kids, build_filters("mw"))
    assert max(np.abs(d).max() for d in details) <= 1e-13
    assert evaluate(parent, (1, 1), 2.0, (0.3, 1.7)) == pytest.approx(plane(0.3, 1.7), abs=1e-13)


def test_haar_cases():
    fb = build_filters("hw")
    parent, details = encode([[1.0]] * 4, fb)
    assert parent[0] == 1.0 and all(d[0] == 0 for d in details)
    for s in (1.0, -3.0, 1e-4):
        p, d = encode([[s], [0.0], [0.0], [0.0]], fb)
        assert p[0] == pytest.approx(s / 4)
        assert all(abs(di[0]) == pytest.approx(abs(s) / 4) for di in d)


def test_decode_with_zero_details():
    mw, hw = build_filters("mw"), build_filters("hw")
    parent = np.array([1.5, 0.2, -0.4])
    kids = decode(parent, [np.zeros(3)] * 3, mw)
    for (sx, sy), c in zip(OFFSETS, kids):
        centre = (sx * 0.5, sy * 0.5)
        for pt in [(centre[0] + 0.3, centre[1] - 0.1), (centre[0] - 0.45, centre[1] + 0.2)]:
            assert evaluate(c, centre, 1.0, pt) == pytest.approx(
                evaluate(parent, (0, 0), 2.0, pt), abs=1e-14)
    np.testing.assert_allclose(decode([2.5], [[0.0]] * 3, hw), [[2.5]] * 4)


@settings(max_examples=50)
@given(st.sampled_from(["mw", "hw"]),
       arrays(np.float64, (12,), elements=st.floats(-1e4, 1e4)))
def test_round_trip_single_node(kind, raw):
    fb = build_filters(kind)
    kids = raw[:4 * fb.ncoef].reshape(4, fb.ncoef)
    p, d = encode(kids, fb)
    np.testing.assert_allclose(decode(p, d, fb), kids, atol=1e-11 * (1 + np.abs(kids).max()))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["mw", "hw"]), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 2**31 - 1))
def test_round_trip_whole_level(kind, ny, nx, seed):
    fb = build_filters(kind)
    fine = np.random.default_rng(seed).normal(size=(2, fb.ncoef, 2 * ny, 2 * nx))
    coarse, details = encode_level(fine, fb)
    assert coarse.shape == (2, fb.ncoef, ny, nx)
    assert details.shape == (2, 3, fb.ncoef, ny, nx)
    np.testing.assert_allclose(decode_level(coarse, details, fb), fine, atol=1e-13)


def test_normalize_detail():
    assert normalize_detail([np.zeros(3)] * 3, 7.0) == 0.0
    assert normalize_detail([np.array([0.002, -0.001, 0.0])] * 3, 0.5) == 0.002
    assert normalize_detail([np.array([0.0, -0.2, 0.1])] * 3, 100.0) == pytest.approx(0.002)


def test_flat_field_has_no_details():
    tree = build_detail_tree(np.stack([np.full((8, 8), 3.0), *np.zeros((2, 8, 8))]), 3,
                             build_filters("mw"))
    assert all(np.abs(d).max() < 1e-15 for d in tree.details)
    assert len(flag_significant(tree, 1e-3)) == 3
    assert not any(f.any() for f in flag_significant(tree, 1e-3))


def test_level_zero_tree():
    fine = np.random.default_rng(0).normal(size=(3, 2, 2))
    tree = build_detail_tree(fine, 0, build_filters("mw"))
    assert tree.details == [] and np.array_equal(tree.coeffs[0][0], fine)


def test_not_a_quadtree_domain():
    with pytest.raises(ValueError):
        build_detail_tree(np.zeros((3, 6, 8)), 2, build_filters("mw"))


@pytest.mark.parametrize("kind", ["mw", "hw"])
def test_spike_details_on_ancestor_chain(kind):
    fb = build_filters(kind)
    fine = np.zeros((fb.ncoef, 16, 16))
    fine[0, 5, 9] = 1.0
    tree = build_detail_tree(fine, 4, fb)
    for lvl, d in enumerate(tree.details):
        mag = np.abs(d[0]).max(axis=(0, 1))
        shift = 4 - lvl
        expected = np.zeros_like(mag, dtype=bool)
        expected[5 >> shift, 9 >> shift] = True
        np.testing.assert_array_equal(mag > 0, expected)
    flags = flag_significant(tree, 1e-3)
    for lvl, f in enumerate(flags):
        assert np.argwhere(f).tolist() == [[5 >> (4 - lvl), 9 >> (4 - lvl)]]
    grid = assemble_grid(tree, flags)
    assert 1 < grid.n_leaves < 4 ** 4
    assert np.count_nonzero(grid.level == 4) == 4


def test_epsilon_extremes():
    fine = np.random.default_rng(1).normal(size=(3, 8, 8))
    tree = build_detail_tree(fine, 3, build_filters("mw"))
    assert all(f.all() for f in flag_significant(tree, 0.0))
    assert not any(f.any() for f in flag_significant(tree, 1e9))
    with pytest.raises(ValueError):
        flag_significant(tree, -1.0)


def test_full_grid_reproduces_fine_field():
    fine = np.random.default_rng(2).normal(size=(3, 8, 16))
    tree = build_detail_tree(fine, 3, build_filters("mw"))
    grid = assemble_grid(tree, full_flags(3, 2, 1))
    z = grid.payload["z"]
    np.testing.assert_allclose(z, fine[:, grid.j, grid.i], atol=1e-12)


def test_no_flags_gives_coarsest_grid():
    fine = np.random.default_rng(3).normal(size=(3, 8, 16))
    tree = build_detail_tree(fine, 3, build_filters("mw"))
    grid = assemble_grid(tree, flag_significant(tree, 1e9))
    assert grid.n_leaves == 2 and np.all(grid.level == 0)


def test_flat_dem_collapses():
    dem = Raster.from_south_up(np.full((17, 17), 4.0))
    grid = generate_static_grid(dem, 1e-3, 4)
    assert grid.n_leaves == 1


def test_valley_grid_is_sparse_and_graded():
    scen = make_valley()
    L = scen.config.max_level
    grid = generate_static_grid(scen.dem, 1e-3, L)
    uniform = grid.M * grid.N * 4 ** L
    assert grid.n_leaves <= 0.5 * uniform
    assert is_graded(grid)
    # topography on grading-forced leaves is exact: compare against the fine projection
    fine = project_vertex_grid(scen.dem.south_up())
    idmap = grid.leaf_index_map()
    avg = np.zeros(grid.n_leaves)
    np.add.at(avg, idmap.ravel(), fine[0].ravel())
    avg /= grid.fine_weights()
    np.testing.assert_allclose(grid.payload["z"][0], avg, atol=1e-10)
