"""DG2, FV1 and ACC on a static, graded, non-uniform quadtree grid, plus the run driver.

Leaf arrays follow the uniform solver's layout with the two spatial axes
replaced by one leaf axis: ``U[field, coeff, leaf]`` and ``z[coeff, leaf]``.

At a face between leaves of different levels the coarse side is evaluated
at the centre of each fine sub-face, so the coarse leaf takes part in two
Riemann problems and receives their length-weighted sum.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import solver_uniform as su
from .field_core import SQRT3, evaluate, project_raster
from .mra import static_grid
from .quadgrid import (GridError, QuadGrid, enumerate_faces, level_histogram, read_nug,
                       sample_to_raster, stats_report, upsample, write_nug)
from .raster_io import (ConfigError, EDGES, Raster, ScenarioConfig, hydrograph_volume,
                        read_ascii_grid, write_ascii_grid)

_LOW_EDGE = {"x": "west", "y": "south"}
_HIGH_EDGE = {"x": "east", "y": "north"}


# -- face tables ----------------------------------------------------------------------

@dataclass
class FaceTable:
    """Precomputed gather indices and weights for one face orientation.

    ``tau_l``/``tau_r`` place each side's evaluation point along the face
    in units of the basis variable: zero at the element's own face centre,
    ``+-sqrt(3)/2`` for a coarse side at a fine sub-face centre.
    ``w_l``/``w_r`` are sub-face length over the receiving leaf size.
    """

    orientation: str
    left: np.ndarray
    right: np.ndarray
    length: np.ndarray
    tau_l: np.ndarray
    tau_r: np.ndarray
    w_l: np.ndarray
    w_r: np.ndarray
    delta: np.ndarray
    b_leaf: np.ndarray
    b_side: np.ndarray
    b_length: np.ndarray
    b_w: np.ndarray

    @property
    def n_faces(self):
        return self.left.size


def leaf_pairs(tables):
    """Leaf index pairs sharing an interior face (duplicates are harmless)."""
    return (np.concatenate([ft.left for ft in tables]),
            np.concatenate([ft.right for ft in tables]))


def build_face_tables(grid: QuadGrid):
    """Face tables for the x- and y-normal faces of a graded grid."""
    faces = enumerate_faces(grid, require_graded=True)
    size = grid.size
    tables = []
    for fs in faces:
        centre_t = grid.yc if fs.orientation == "x" else grid.xc
        lvl_l, lvl_r = grid.level[fs.left], grid.level[fs.right]
        tau_l = np.where(lvl_l < lvl_r,
                         2 * SQRT3 * (fs.along - centre_t[fs.left]) / size[fs.left], 0.0)
        tau_r = np.where(lvl_r < lvl_l,
                         2 * SQRT3 * (fs.along - centre_t[fs.right]) / size[fs.right], 0.0)
        tables.append(FaceTable(
            fs.orientation, fs.left, fs.right, fs.length, tau_l, tau_r,
            fs.length / size[fs.left], fs.length / size[fs.right],
            0.5 * (size[fs.left] + size[fs.right]),
            fs.b_leaf, fs.b_side, fs.b_length, fs.b_length / size[fs.b_leaf]))
    return tables


def _rotate(a, orientation):
    """(h, qx, qy) <-> (h, qn, qt) for the given face orientation."""
    return a if orientation == "x" else a[[0, 2, 1]]


def _limit_pair(U, orientation):
    """(high-side limit, low-side limit, tangential slope) per leaf."""
    c0 = U[:, 0]
    if orientation == "x":
        return c0 + SQRT3 * U[:, 1], c0 - SQRT3 * U[:, 1], U[:, 2]
    return c0 + SQRT3 * U[:, 2], c0 - SQRT3 * U[:, 2], U[:, 1]


def interior_face_states(U, z, ft: FaceTable):
    """Normal-frame states on both sides of every interior (sub-)face.

    Returns ``(left, zl, right, zr, h_own_l, h_own_r)``.
    """
    hi, lo, tang = _limit_pair(U, ft.orientation)
    zhi, zlo, ztang = _limit_pair(z[None], ft.orientation)
    L, R = ft.left, ft.right
    left = hi[:, L] + ft.tau_l * tang[:, L]
    right = lo[:, R] + ft.tau_r * tang[:, R]
    zl = zhi[0, L] + ft.tau_l * ztang[0, L]
    zr = zlo[0, R] + ft.tau_r * ztang[0, R]
    return (_rotate(left, ft.orientation), zl, _rotate(right, ft.orientation), zr,
            hi[0, L], lo[0, R])


def accumulate_face_fluxes(FL, FR, ft: FaceTable, U, z, boundaries, n, g, h_dry, threads=1):
    """Per-leaf high-side and low-side fluxes (global frame) from interior fluxes ``FL, FR``."""
    high = np.zeros((3, n))
    low = np.zeros((3, n))
    FLg = _rotate(FL, ft.orientation)
    FRg = _rotate(FR, ft.orientation)
    for c in range(3):
        high[c] = np.bincount(ft.left, weights=FLg[c] * ft.w_l, minlength=n)
        low[c] = np.bincount(ft.right, weights=FRg[c] * ft.w_r, minlength=n)
    if ft.b_leaf.size:
        hi, lo, _ = _limit_pair(U, ft.orientation)
        zhi, zlo, _ = _limit_pair(z[None], ft.orientation)
        normal = 1 if ft.orientation == "x" else 2
        for side, own_all, zown, edge in ((0, lo, zlo[0], _LOW_EDGE[ft.orientation]),
                                          (1, hi, zhi[0], _HIGH_EDGE[ft.orientation])):
            sel = ft.b_side == side
            if not np.any(sel):
                continue
            leaves = ft.b_leaf[sel]
            own = own_all[:, leaves]
            zo = zown[leaves]
            # open edges see the element average, as on the uniform grid
            if boundaries[edge] == "open":
                ghost, zg = U[:, 0, leaves], z[0, leaves]
            else:
                ghost, zg = own.copy(), zo
                if boundaries[edge] == "reflective":
                    ghost[normal] = -ghost[normal]
            if side == 0:
                _, Fown = su.parallel_face_fluxes(_rotate(ghost, ft.orientation), zg,
                                                  _rotate(own, ft.orientation), zo,
                                                  g=g, h_dry=h_dry, threads=threads)
                target = low
            else:
                Fown, _ = su.parallel_face_fluxes(_rotate(own, ft.orientation), zo,
                                                  _rotate(ghost, ft.orientation), zg,
                                                  g=g, h_dry=h_dry, threads=threads)
                target = high
            Fg = _rotate(Fown, ft.orientation)
            for c in range(3):
                target[c] += np.bincount(leaves, weights=Fg[c] * ft.b_w[sel], minlength=n)
    return high, low


def nonuniform_face_flux(U, z, tables, boundaries, g=su.G, h_dry=su.H_DRY, threads=1,
                         states=None):
    """Per-leaf ``FE, FW, GN, GS`` on a non-uniform grid.

    ``states`` optionally maps an orientation to precomputed interior face
    states (as returned by :func:`interior_face_states`); the adaptive solver
    uses it to substitute encoded coarse-scale states.
    """
    n = U.shape[-1]
    out = []
    for ft in tables:
        st = states[ft.orientation] if states else interior_face_states(U, z, ft)
        left, zl, right, zr, own_l, own_r = st
        FL, FR = su.parallel_face_fluxes(left, zl, right, zr, own_l, own_r, g, h_dry, threads)
        out.extend(accumulate_face_fluxes(FL, FR, ft, U, z, boundaries, n, g, h_dry, threads))
    FE, FW, GN, GS = out
    return FE, FW, GN, GS


def acc_aggregate_discharge(h, z0, q_prev, ft: FaceTable, manning, dt, g=su.G, h_dry=su.H_DRY):
    """Sub-face discharges and per-leaf volumetric exchange rates for one orientation.

    Returns ``(q, exchange)`` where ``exchange[leaf]`` is the net inflow rate
    in m^3/s through interior faces of this orientation.
    """
    L, R = ft.left, ft.right
    eta = h + z0
    n_face = 0.5 * (manning[L] + manning[R])
    q = su.acc_face_discharge(eta[L], eta[R], z0[L], z0[R], q_prev, ft.delta, n_face, dt, g, h_dry)
    return q, face_exchange(q, ft, h.size)


def face_exchange(q, ft: FaceTable, n):
    vol = q * ft.length
    return np.bincount(ft.right, weights=vol, minlength=n) - np.bincount(ft.left, weights=vol, minlength=n)


# -- simulation on a static grid -----------------------------------------------------

@dataclass
class NonUniformSim:
    grid: QuadGrid
    U: np.ndarray            # (3, 3, n)
    z: np.ndarray            # (3, n)
    tables: list
    manning: np.ndarray      # (n,)
    scheme: str = "dg2"
    t: float = 0.0
    dt: float = 0.0
    g: float = su.G
    h_dry: float = su.H_DRY
    boundaries: dict = field(default_factory=lambda: {e: "reflective" for e in EDGES})
    q_face: dict | None = None      # ACC: orientation -> sub-face discharges
    q_bound: dict | None = None     # ACC: orientation -> boundary-face discharges
    threads: int = 1
    outflow: float = 0.0            # cumulative volume lost through the domain edges

    @property
    def size(self):
        return self.grid.size

    def volume(self) -> float:
        return float(np.sum(self.U[0, 0] * self.size * self.size))


def make_nonuniform_sim(grid: QuadGrid, h, z, scheme="dg2", manning=0.0, qx=None, qy=None,
                        tables=None, **kw) -> NonUniformSim:
    n = grid.n_leaves
    U = np.zeros((3, 3, n))
    h = np.asarray(h, dtype=float)
    U[0] = h if h.ndim == 2 else [h, np.zeros(n), np.zeros(n)]
    for k, q in ((1, qx), (2, qy)):
        if q is not None:
            q = np.asarray(q, dtype=float)
            U[k] = q if q.ndim == 2 else [q, np.zeros(n), np.zeros(n)]
    if scheme != "dg2":
        U[:, 1:] = 0.0
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = np.stack([z, np.zeros(n), np.zeros(n)])
    man = np.broadcast_to(np.asarray(manning, dtype=float), (n,)).copy()
    sim = NonUniformSim(grid, U, z, tables if tables is not None else build_face_tables(grid),
                        man, scheme, **kw)
    if scheme == "acc":
        sim.q_face = {ft.orientation: np.zeros(ft.n_faces) for ft in sim.tables}
        sim.q_bound = {ft.orientation: np.zeros(ft.b_leaf.size) for ft in sim.tables}
    return sim


def boundary_outflow_rate(FE, FW, GN, GS, tables, size) -> float:
    """Net volume per second leaving a leaf set through the domain edges."""
    rate = 0.0
    for ft, high, low in zip(tables, (FE, GN), (FW, GS)):
        for side, F, sign in ((1, high, 1.0), (0, low, -1.0)):
            lv = ft.b_leaf[ft.b_side == side]
            rate += sign * float(np.sum(F[0, lv] * size[lv]))
    return rate


def _leaf_rhs(sim: NonUniformSim, U, slopes, states_fn=None):
    """Leaf operator and the boundary outflow rate it implies."""
    if slopes:
        front = su.front_mask(U[0, 0], leaf_pairs(sim.tables))
        U, z = su.flatten_front(U, sim.z, front)
    else:
        front = np.zeros(U.shape[2:], dtype=bool)
        z = su.flat_topography(sim.z)
    states = states_fn(U, z, front) if states_fn else None
    FE, FW, GN, GS = nonuniform_face_flux(U, z, sim.tables, sim.boundaries, sim.g, sim.h_dry,
                                          sim.threads, states)
    R = sim.size
    L = su.element_operator(U, z, FE, FW, GN, GS, R, R, sim.g, sim.h_dry, slopes=slopes)
    if slopes:
        L[:, 1:, front] = 0.0
    return L, boundary_outflow_rate(FE, FW, GN, GS, sim.tables, R)


def _check_finite(U, t):
    if not np.all(np.isfinite(U)):
        bad = np.argwhere(~np.isfinite(U))[0]
        raise su.NumericalBlowUp(t, int(bad[-1]))


def _acc_step(sim: NonUniformSim, dt):
    g, hd = sim.g, sim.h_dry
    h, z0 = sim.U[0, 0], sim.z[0]
    n = h.size
    R = sim.size
    q_new, qb_new = {}, {}
    out_vol = np.zeros(n)
    for ft in sim.tables:
        L, Rr = ft.left, ft.right
        eta = h + z0
        n_face = 0.5 * (sim.manning[L] + sim.manning[Rr])
        q = su.acc_face_discharge(eta[L], eta[Rr], z0[L], z0[Rr], sim.q_face[ft.orientation],
                                  ft.delta, n_face, dt, g, hd)
        qb = np.zeros(ft.b_leaf.size)
        for side, edge in ((0, _LOW_EDGE[ft.orientation]), (1, _HIGH_EDGE[ft.orientation])):
            sel = np.nonzero(ft.b_side == side)[0]
            if sel.size == 0 or sim.boundaries[edge] != "open":
                continue
            lv = ft.b_leaf[sel]
            hb, zb = h[lv], z0[lv]
            zg = su.open_boundary_bed(sim.z[:, lv], edge)
            qp = sim.q_bound[ft.orientation][sel]
            if side == 0:
                qb[sel] = su.acc_face_discharge(hb + zg, hb + zb, zg, zb, qp, R[lv],
                                                sim.manning[lv], dt, g, hd)
            else:
                qb[sel] = su.acc_face_discharge(hb + zb, hb + zg, zb, zg, qp, R[lv],
                                                sim.manning[lv], dt, g, hd)
        q_new[ft.orientation], qb_new[ft.orientation] = q, qb
        vol = q * ft.length * dt
        out_vol += np.bincount(L, weights=np.maximum(vol, 0), minlength=n)
        out_vol += np.bincount(Rr, weights=np.maximum(-vol, 0), minlength=n)
        bvol = qb * ft.b_length * dt
        sign = np.where(ft.b_side == 1, 1.0, -1.0)
        out_vol += np.bincount(ft.b_leaf, weights=np.maximum(sign * bvol, 0), minlength=n)

    r = su.limit_outflow(h, R * R, dt, out_vol)
    exchange = np.zeros(n)
    out = 0.0
    for ft in sim.tables:
        q = q_new[ft.orientation]
        q = q * np.where(q > 0, r[ft.left], r[ft.right])
        q_new[ft.orientation] = q
        exchange += face_exchange(q, ft, n)
        qb = qb_new[ft.orientation]
        sign = np.where(ft.b_side == 1, 1.0, -1.0)
        qb = qb * np.where(sign * qb > 0, r[ft.b_leaf], 1.0)
        qb_new[ft.orientation] = qb
        exchange -= np.bincount(ft.b_leaf, weights=sign * qb * ft.b_length, minlength=n)
        out += dt * float(np.sum(sign * qb * ft.b_length))

    h_new = np.maximum(h + dt * exchange / (R * R), 0.0)
    U = np.zeros_like(sim.U)
    U[0, 0] = h_new
    # cell-mean discharges for output: mean of low-side and high-side face values
    for k, ft in zip((1, 2), sim.tables):
        q = q_new[ft.orientation]
        qb = qb_new[ft.orientation]
        # bincount of an empty face list is integer-typed, so accumulate into floats
        hi = np.bincount(ft.left, weights=q * ft.w_l, minlength=n).astype(float)
        lo = np.bincount(ft.right, weights=q * ft.w_r, minlength=n).astype(float)
        hi += np.bincount(ft.b_leaf, weights=np.where(ft.b_side == 1, qb * ft.b_w, 0.0), minlength=n)
        lo += np.bincount(ft.b_leaf, weights=np.where(ft.b_side == 0, qb * ft.b_w, 0.0), minlength=n)
        U[k, 0] = 0.5 * (hi + lo)
    _check_finite(U, sim.t + dt)
    sim.U, sim.q_face, sim.q_bound = U, q_new, qb_new
    sim.outflow += out


def step_nonuniform(sim: NonUniformSim, dt: float, states_fn=None, strict=True) -> NonUniformSim:
    """Advance ``sim`` in place by ``dt`` with its scheme and return it.

    ``states_fn(U, z, front)``, when given, supplies interior face states per stage
    from the front-flattened coefficients (used by the adaptive solver).
    With ``strict`` a clearly negative depth average raises
    :class:`~mwflood.solver_uniform.PositivityViolation` before ``sim`` changes.
    """
    if sim.scheme == "acc":
        _acc_step(sim, dt)
    else:
        U = su.apply_friction(sim.U, sim.manning, dt, sim.g, sim.h_dry)
        slopes = sim.scheme == "dg2"
        pairs = leaf_pairs(sim.tables)
        L0, r0 = _leaf_rhs(sim, U, slopes, states_fn)
        U1 = su.check_stage(U + dt * L0, sim.t, strict)
        U1 = su.positivity_limit(U1, sim.h_dry, pairs=pairs)
        out = dt * r0
        if slopes:
            L1, r1 = _leaf_rhs(sim, U1, True, states_fn)
            U1 = su.check_stage(0.5 * (U + U1 + dt * L1), sim.t, strict)
            U1 = su.positivity_limit(U1, sim.h_dry, pairs=pairs)
            out = 0.5 * dt * (r0 + r1)
        _check_finite(U1, sim.t + dt)
        sim.U = U1
        sim.outflow += out
    sim.t += dt
    sim.dt = dt
    return sim


def compute_dt_nonuniform(sim: NonUniformSim, courant: float) -> float:
    h, qx, qy = sim.U[0, 0], sim.U[1, 0], sim.U[2, 0]
    if sim.scheme == "acc":
        return su.acc_cfl_dt(h, sim.size, courant, sim.g, sim.h_dry)
    return su.cfl_dt(h, qx, qy, sim.size, courant, sim.g, sim.h_dry)


def leaf_inflow_weights(grid: QuadGrid, fine_weights):
    """Aggregate fine-cell inflow weights onto leaves, as depth per fine-cell volume."""
    idmap = grid.leaf_index_map()
    w = np.bincount(idmap.ravel(), weights=fine_weights.ravel(), minlength=grid.n_leaves)
    return w / grid.fine_weights()


# -- models used by the run driver --------------------------------------------------------

class UniformModel:
    """Adapter exposing a :class:`~mwflood.solver_uniform.SimState` to the run driver."""

    def __init__(self, state: su.SimState, courant, inflows=(), fine_weights=()):
        self.state = state
        self.courant = courant
        self.inflows = list(inflows)
        self.weights = list(fine_weights)

    @property
    def t(self):
        return self.state.t

    @t.setter
    def t(self, value):
        self.state.t = value

    @property
    def scheme(self):
        return self.state.scheme

    def max_dt(self):
        return su.compute_dt(self.state, self.courant)

    def source_limit(self, dt):
        if not self.inflows:
            return dt
        s = self.state
        area = s.dx * s.dx
        h = s.U[0, 0]
        return su.source_limited_dt(dt, s.t, self.inflows, [w.max() / area for w in self.weights],
                                    [float(h[w > 0].max()) for w in self.weights], s.dx,
                                    self.courant, s.g)

    def advance(self, dt):
        """Advance by ``dt`` or, if positivity demands it, a halved step; returns the step."""
        for attempt in range(su.MAX_HALVINGS + 1):
            s = su.apply_sources_and_boundaries(self.state, self.inflows, dt, self.weights)
            try:
                self.state = su.step(s, dt, strict=attempt < su.MAX_HALVINGS)
                return dt
            except su.PositivityViolation:
                dt *= 0.5

    def volume(self):
        return self.state.volume()

    def outflow(self):
        return self.state.outflow

    def leaf_count(self):
        return int(np.prod(self.state.shape))

    def fine_coeffs(self):
        return self.state.U

    def gauge(self, x, y, xll, yll):
        s = self.state
        ny, nx = s.shape
        i = int(np.clip(np.floor((x - xll) / s.dx), 0, nx - 1))
        j = int(np.clip(np.floor((y - yll) / s.dx), 0, ny - 1))
        centre = (xll + (i + 0.5) * s.dx, yll + (j + 0.5) * s.dx)
        return _gauge_values(s.U[:, :, j, i], s.z[:, j, i], centre, s.dx, (x, y), s.h_dry,
                             s.scheme == "dg2")


def _retry_halving(model, dt, step_fn):
    U = model.sim.U.copy()
    for attempt in range(su.MAX_HALVINGS + 1):
        model.add_sources(dt)
        try:
            step_fn(dt, attempt < su.MAX_HALVINGS)
            return dt
        except su.PositivityViolation:
            model.sim.U = U.copy()
            dt *= 0.5


class NonUniformModel:
    def __init__(self, sim: NonUniformSim, courant, inflows=(), fine_weights=()):
        self.sim = sim
        self.courant = courant
        self.inflows = list(inflows)
        self.leaf_weights = [leaf_inflow_weights(sim.grid, w) for w in fine_weights]

    @property
    def t(self):
        return self.sim.t

    @t.setter
    def t(self, value):
        self.sim.t = value

    @property
    def scheme(self):
        return self.sim.scheme

    @property
    def grid(self):
        return self.sim.grid

    def max_dt(self):
        return compute_dt_nonuniform(self.sim, self.courant)

    def source_limit(self, dt):
        if not self.inflows:
            return dt
        sim = self.sim
        area = sim.grid.cellsize ** 2
        h = sim.U[0, 0]
        return su.source_limited_dt(dt, sim.t, self.inflows,
                                    [w.max() / area for w in self.leaf_weights],
                                    [float(h[w > 0].max()) for w in self.leaf_weights],
                                    float(sim.size.min()), self.courant, sim.g)

    def add_sources(self, dt):
        sim = self.sim
        area = sim.grid.cellsize ** 2
        for inf, w in zip(self.inflows, self.leaf_weights):
            vol = hydrograph_volume(inf.hydrograph, sim.t, sim.t + dt)
            sim.U[0, 0] += w * (vol / area)

    def advance(self, dt):
        """Advance by ``dt`` or, if positivity demands it, a halved step; returns the step."""
        return _retry_halving(self, dt, lambda dt, strict: step_nonuniform(self.sim, dt,
                                                                          strict=strict))

    def volume(self):
        return self.sim.volume()

    def outflow(self):
        return self.sim.outflow

    def leaf_count(self):
        return self.sim.grid.n_leaves

    def fine_coeffs(self):
        grid = self.sim.grid
        out = np.zeros((3, 3) + grid.fine_shape)
        for k in range(3):
            out[k, 0] = sample_to_raster(grid, self.sim.U[k]).south_up()
        return out

    def gauge(self, x, y, xll, yll):
        sim = self.sim
        k = sim.grid.locate(x, y)
        centre = (sim.grid.xc[k], sim.grid.yc[k])
        return _gauge_values(sim.U[:, :, k], sim.z[:, k], centre, sim.size[k], (x, y), sim.h_dry,
                             sim.scheme == "dg2")


def _gauge_values(Uk, zk, centre, size, point, h_dry, planar):
    """``(h, eta, u, v)`` at a gauge inside one element."""
    if planar:
        h, qx, qy = (float(evaluate(Uk[f], centre, size, point)) for f in range(3))
        z = float(evaluate(zk, centre, size, point))
        h = max(h, 0.0)
    else:
        h, qx, qy = (float(Uk[f, 0]) for f in range(3))
        z = float(zk[0])
    u = qx / h if h > h_dry else 0.0
    v = qy / h if h > h_dry else 0.0
    return h, h + z, u, v


# -- building a model from a config ---------------------------------------------------

@dataclass
class Setup:
    """Everything a run needs that is derived from the config and the DEM."""

    cfg: ScenarioConfig
    dem: Raster
    field: object               # ProjectedField on the level-L grid
    L: int
    h: np.ndarray               # (3, ny, nx) initial depth coefficients on the fine grid
    manning: np.ndarray         # (ny, nx)
    active: np.ndarray          # (ny, nx)
    inflow_weights: list        # fine-grid weights, one per inflow

    @property
    def fine_shape(self):
        return self.active.shape


def _fine_cells(raster: Raster, shape, what):
    vals = raster.south_up()
    if vals.shape[0] > shape[0] or vals.shape[1] > shape[1]:
        raise ConfigError([f"{what} raster is larger than the DEM grid"])
    return np.pad(vals, ((0, shape[0] - vals.shape[0]), (0, shape[1] - vals.shape[1])), mode="edge")


def initial_depth_coeffs(z, cfg: ScenarioConfig, depth=None, h_dry=su.H_DRY):
    """Initial depth coefficients (3, ...) from the config's initial-condition keys."""
    h = np.zeros_like(z)
    if cfg.initial_surface is not None:
        h[0] = cfg.initial_surface - z[0]
        h[1:] = -z[1:]
        dry = h[0] <= 0
        h[:, dry] = 0.0
    elif depth is not None:
        h[0] = depth
    elif cfg.initial_depth > 0:
        h[0] = cfg.initial_depth
    U = np.zeros((3,) + z.shape)
    U[0] = h
    return su.positivity_limit(U, h_dry)[0]


def prepare(cfg: ScenarioConfig) -> Setup:
    """Read the DEM and auxiliary rasters and build the fine-grid initial state."""
    dem = read_ascii_grid(cfg.dem_path)
    L = cfg.max_level if cfg.max_level is not None else 0
    field_ = project_raster(dem, L, cfg.dem_registration)
    shape = field_.active.shape
    depth = None
    if cfg.initial_depth_path:
        depth = _fine_cells(read_ascii_grid(cfg.initial_depth_path), shape, "initial depth")
        depth = np.where(depth == -9999.0, 0.0, np.maximum(depth, 0.0))
    h = initial_depth_coeffs(field_.coeffs, cfg, depth, cfg.h_dry)
    h[:, ~field_.active] = 0.0
    if cfg.manning_path:
        manning = _fine_cells(read_ascii_grid(cfg.manning_path), shape, "manning")
    else:
        manning = np.full(shape, cfg.manning)
    weights = [su.inflow_weights(inf, shape, field_.active) for inf in cfg.inflows]
    return Setup(cfg, dem, field_, L, h, manning, field_.active, weights)


def build_model(cfg: ScenarioConfig, setup: Setup | None = None):
    """The model for ``cfg``: uniform raster, static non-uniform grid or adaptive grid."""
    setup = setup or prepare(cfg)
    if cfg.is_adaptive:
        from .solver_adaptive import build_adaptive_model
        return build_adaptive_model(cfg, setup)
    fld = setup.field
    kw = dict(g=cfg.g, h_dry=cfg.h_dry, boundaries=dict(cfg.boundaries), threads=cfg.threads)
    if cfg.grid_mode == "uniform" and cfg.grid_path is None:
        state = su.make_state(setup.h, fld.coeffs, fld.cellsize, scheme=cfg.solver,
                              manning=setup.manning, **kw)
        return UniformModel(state, cfg.courant_number, cfg.inflows, setup.inflow_weights)
    if cfg.grid_path is not None:
        grid = read_nug(cfg.grid_path)
        if grid.fine_shape != setup.fine_shape or grid.L != setup.L:
            raise ConfigError([f"grid file {cfg.grid_path} does not match the DEM "
                               f"(grid {grid.fine_shape} at L={grid.L}, DEM {setup.fine_shape} at L={setup.L})"])
        z = grid.payload["z"]
    else:
        grid = static_grid(fld, cfg.epsilon, graded=True, wavelet="mw")
        z = grid.payload["z"]
    grid.payload["z"] = z
    if cfg.initial_surface is not None:
        h_leaf = initial_depth_coeffs(z, cfg, h_dry=cfg.h_dry)
        h_leaf[:, leaf_average(grid, setup.active[None].astype(float))[0] == 0] = 0.0
    else:
        h_leaf = leaf_average(grid, setup.h)
    man = leaf_average(grid, setup.manning[None])[0]
    sim = make_nonuniform_sim(grid, h_leaf, z, cfg.solver, man, **kw)
    return NonUniformModel(sim, cfg.courant_number, cfg.inflows, setup.inflow_weights)


def leaf_average(grid: QuadGrid, fine):
    """Average fine-grid fields (k, ny, nx) onto leaves; slopes of coarse leaves are zero.

    For leaves at the finest level the fine coefficients are copied exactly.
    """
    fine = np.asarray(fine, dtype=float)
    idmap = grid.leaf_index_map()
    out = np.zeros((fine.shape[0], grid.n_leaves))
    out[0] = np.bincount(idmap.ravel(), weights=fine[0].ravel(), minlength=grid.n_leaves) \
        / grid.fine_weights()
    fine_leaf = grid.level == grid.L
    if fine.shape[0] > 1 and np.any(fine_leaf):
        out[1:, fine_leaf] = fine[1:, grid.j[fine_leaf], grid.i[fine_leaf]]
    if np.any(fine_leaf):
        out[0, fine_leaf] = fine[0, grid.j[fine_leaf], grid.i[fine_leaf]]
    return out


# -- the run driver ---------------------------------------------------------------------

def output_times(end_time, interval):
    """Output instants ``0, dt, 2 dt, ...`` up to and including ``end_time``."""
    if interval is None or interval >= end_time:
        times = [0.0, end_time]
    else:
        k = int(np.floor(end_time / interval + 1e-9))
        times = [i * interval for i in range(k + 1)] + [end_time]
    return sorted(set(float(t) for t in times))


@dataclass
class RunResult:
    out_dir: str
    steps: int
    wall_time: float
    mass_error: float
    status: str
    leaf_counts: list


def _write_fields(model, setup: Setup, out_dir, k, nodata=-9999.0):
    U = model.fine_coeffs()
    fld = setup.field
    ny0, nx0 = setup.dem.nrows, setup.dem.ncols
    if setup.cfg.dem_registration == "vertex":
        ny0, nx0 = ny0 - 1, nx0 - 1
    for name, f in (("depth", 0), ("qx", 1), ("qy", 2)):
        vals = np.where(setup.active, U[f, 0], nodata)[:ny0, :nx0]
        write_ascii_grid(Raster.from_south_up(vals, fld.xll, fld.yll, fld.cellsize, nodata),
                         os.path.join(out_dir, f"{name}_{k:04d}.asc"))


def _write_gauges(out_dir, series):
    for g, rows in enumerate(series):
        with open(os.path.join(out_dir, f"gauge_{g}.csv"), "w") as fh:
            fh.write("t,h,eta,u,v\n")
            for row in rows:
                fh.write(",".join(f"{v!r}" for v in row) + "\n")


def step_towards(model, target: float) -> float:
    """One CFL- and source-limited step that never passes ``target``; returns its size.

    A step that reaches ``target`` lands on it exactly.
    """
    dt = model.max_dt()
    if not np.isfinite(dt) or model.t + dt >= target:
        dt = target - model.t
        landing = True
    else:
        landing = False
    limited = model.source_limit(dt)
    if limited < dt:
        dt, landing = limited, False
    taken = model.advance(dt)
    if taken < dt:
        dt, landing = taken, False
    if landing:
        model.t = target
    return dt


def advance_to(model, t_end: float, max_steps=None) -> int:
    """Step ``model`` to ``t_end`` without any output; returns the number of steps."""
    steps = 0
    while model.t < t_end and (max_steps is None or steps < max_steps):
        step_towards(model, t_end)
        steps += 1
    return steps


def run_loop(model, setup: Setup, out_dir, hooks=None) -> RunResult:
    """Advance ``model`` to ``end_time``, writing rasters, gauges and stats.

    ``hooks`` may provide ``after_step(model)`` (called after every step,
    inside the timed region) and ``on_output(model, k)`` (called at each
    output time, outside it).
    """
    cfg = setup.cfg
    os.makedirs(out_dir, exist_ok=True)
    times = output_times(cfg.end_time, cfg.output_interval)
    fld = setup.field
    gauges = [[] for _ in cfg.gauges]

    def sample_gauges():
        for g, (x, y) in enumerate(cfg.gauges):
            gauges[g].append((model.t,) + model.gauge(x, y, fld.xll, fld.yll))

    with open(os.path.join(out_dir, "outputs.csv"), "w") as fh:
        fh.write("index,t\n")
        for k, t in enumerate(times):
            fh.write(f"{k},{t!r}\n")

    v0 = model.volume()
    inflow_total = 0.0
    steps = 0
    dts = []
    leaf_counts = [(0.0, model.leaf_count())]
    wall = 0.0
    status = "completed"
    failure = None
    _write_fields(model, setup, out_dir, 0)
    if hooks and hasattr(hooks, "on_output"):
        hooks.on_output(model, 0)
    sample_gauges()
    k_out = 1
    try:
        while k_out < len(times):
            target = times[k_out]
            tic = time.perf_counter()
            while model.t < target:
                t0 = model.t
                dt = step_towards(model, target)
                inflow_total += sum(hydrograph_volume(inf.hydrograph, t0, t0 + dt)
                                    for inf in cfg.inflows)
                if hooks and hasattr(hooks, "after_step"):
                    hooks.after_step(model)
                steps += 1
                dts.append(dt)
                leaf_counts.append((model.t, model.leaf_count()))
                sample_gauges()
            wall += time.perf_counter() - tic
            _write_fields(model, setup, out_dir, k_out)
            if hooks and hasattr(hooks, "on_output"):
                hooks.on_output(model, k_out)
            k_out += 1
    except su.NumericalBlowUp as exc:
        status = "blow-up"
        failure = exc
    v1 = model.volume()
    outflow = model.outflow()
    expected = v0 + inflow_total - outflow
    mass_err = abs(v1 - expected) / max(abs(expected), 1e-300)
    _write_gauges(out_dir, gauges)
    lines = [f"solver: {cfg.solver}",
             f"status: {status}",
             f"steps: {steps}",
             f"end_time: {model.t!r}"]
    if failure is not None:
        lines.append(f"failure_time: {failure.t!r}")
        lines.append(f"failure_element: {failure.element}")
    if dts:
        lines.append(f"dt_min: {min(dts)!r}")
        lines.append(f"dt_mean: {float(np.mean(dts))!r}")
        lines.append(f"dt_max: {max(dts)!r}")
    lines += [f"initial_volume: {v0!r}", f"inflow_volume: {inflow_total!r}",
              f"boundary_outflow: {outflow!r}",
              f"final_volume: {v1!r}", f"relative_mass_error: {mass_err:.3e}",
              f"leaf_count: {model.leaf_count()}"]
    if hasattr(model, "grid"):
        lines.append(stats_report(model.grid))
    lines.append(f"wall_time_s: {wall:.6f}")
    with open(os.path.join(out_dir, "stats.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    result = RunResult(out_dir, steps, wall, mass_err, status, leaf_counts)
    if failure is not None:
        raise failure
    return result


def run_simulation(cfg: ScenarioConfig, out_dir=None) -> RunResult:
    """Run a uniform or static non-uniform simulation from ``cfg``."""
    if cfg.is_adaptive:
        from .solver_adaptive import run_adaptive
        return run_adaptive(cfg, out_dir)
    out_dir = out_dir or cfg.output_dir
    setup = prepare(cfg)
    model = build_model(cfg, setup)
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(model, NonUniformModel):
        write_nug(model.grid, os.path.join(out_dir, "grid.nug"), model.sim.z)
    return run_loop(model, setup, out_dir)


__all__ = [
    "FaceTable", "build_face_tables", "nonuniform_face_flux", "acc_aggregate_discharge",
    "NonUniformSim", "make_nonuniform_sim", "step_nonuniform", "compute_dt_nonuniform",
    "run_simulation", "run_loop", "prepare", "build_model", "UniformModel", "NonUniformModel",
    "step_towards", "advance_to", "boundary_outflow_rate",
    "GridError", "level_histogram", "upsample",
]
