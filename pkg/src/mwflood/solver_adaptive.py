"""Dynamically adaptive MWDG2 and HWFV1 solvers.

Every step (or every ``adapt_every`` steps) the flow on the current leaves is
encoded up the quadtree, nodes with significant flow or topography details
are kept refined, a one-ring buffer and 2:1 grading are added, and the flow
is decoded onto the new leaf set. Nodes that already existed keep their
encoded values; newly created nodes are decoded from their parent with zero
flow details. Topography always comes from the reference tree built once
from the DEM, so it never loses detail.

Between adaptations the DG2 (MW) or FV1 (HW) scheme runs on the leaf set as
on a static non-uniform grid, except at faces between leaves of different
levels: there the fine side is replaced by the coarse-scale state obtained
by encoding the fine siblings, and a single Riemann problem is solved at the
coarse face centre.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import solver_uniform as su
from .mra import build_detail_tree, build_filters
from .quadgrid import (QuadGrid, ancestor_closure, dilate, existing_nodes, grade,
                       level_shape, write_nug)
from .raster_io import ScenarioConfig
from .solver_nonuniform import (NonUniformModel, Setup, _rotate, build_face_tables,
                                interior_face_states, leaf_inflow_weights, make_nonuniform_sim,
                                _retry_halving, prepare, run_loop, step_nonuniform)

# child offsets (di, dj) in storage order SW, SE, NW, NE
_CHILD_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))


def encode_upward(values, grid: QuadGrid, refined, fb, details=False):
    """Encode per-leaf coefficients to every internal node of the tree.

    ``values`` has shape (nfields, ncoef >= fb.ncoef, n_leaves). Returns
    dense per-level arrays (nfields, fb.ncoef, Ny_l, Nx_l) filled at every
    existing node and, when ``details`` is set, per-level arrays
    (nfields, Ny_l, Nx_l) holding each internal node's largest absolute
    detail coefficient (zero elsewhere).
    """
    n = fb.ncoef
    nf = values.shape[0]
    dense = [np.zeros((nf, n) + level_shape(grid.M, grid.N, lvl)) for lvl in range(grid.L + 1)]
    mags = [np.zeros((nf,) + level_shape(grid.M, grid.N, lvl)) for lvl in range(grid.L)]
    for lvl in range(grid.L + 1):
        sel = np.nonzero(grid.level == lvl)[0]
        if sel.size:
            dense[lvl][:, :, grid.j[sel], grid.i[sel]] = values[:, :n, sel]
    for lvl in range(grid.L - 1, -1, -1):
        jj, ii = np.nonzero(refined[lvl])
        if jj.size == 0:
            continue
        fine = dense[lvl + 1]
        kids = np.concatenate([fine[:, :, 2 * jj + dj, 2 * ii + di] for di, dj in _CHILD_OFFSETS],
                              axis=1)
        out = np.einsum("ij,fjk->fik", fb.enc, kids)
        dense[lvl][:, :, jj, ii] = out[:, :n]
        if details:
            mags[lvl][:, jj, ii] = np.abs(out[:, n:]).max(axis=1)
    return (dense, mags) if details else dense


def decode_missing(dense, old_exists, new_exists, fb):
    """Fill nodes of the new tree that did not exist in the old one.

    Each missing node is decoded from its parent with zero details, level
    by level from the root, so deeper missing nodes see already-filled
    parents. Works in place on ``dense``.
    """
    hh = fb.HH
    for lvl in range(1, len(dense)):
        jj, ii = np.nonzero(new_exists[lvl] & ~old_exists[lvl])
        if jj.size == 0:
            continue
        slot = 2 * (jj % 2) + (ii % 2)
        parent = dense[lvl - 1][:, :, jj // 2, ii // 2]          # (nf, n, k)
        child = 4.0 * np.einsum("kji,fjk->fik", hh[slot], parent)
        dense[lvl][:, :, jj, ii] = child
    return dense


@dataclass
class AdaptiveSim:
    """State of an adaptive run."""

    L: int
    M: int
    N: int
    cellsize: float
    xll: float
    yll: float
    fb: object                       # flow/topography filter bank
    topo_levels: list                # exact encoded topography per level, (3, Ny_l, Nx_l)
    topo_norm_details: list          # normalised topography detail per level
    epsilon: float
    scheme: str                      # "dg2" for MWDG2, "fv1" for HWFV1
    sim: object = None               # NonUniformSim on the current leaf set
    manning_fine: np.ndarray | None = None
    kw: dict = field(default_factory=dict)
    elements: list = field(default_factory=list)

    @property
    def grid(self) -> QuadGrid:
        return self.sim.grid

    @property
    def t(self):
        return self.sim.t

    def leaf_topography(self, grid: QuadGrid):
        z = np.zeros((3, grid.n_leaves))
        for lvl in range(self.L + 1):
            sel = np.nonzero(grid.level == lvl)[0]
            if sel.size:
                z[:, sel] = self.topo_levels[lvl][:, grid.j[sel], grid.i[sel]]
        return z


def make_adaptive(setup: Setup, cfg: ScenarioConfig) -> AdaptiveSim:
    """Reference topography tree plus the initial adapted leaf set."""
    fld = setup.field
    wavelet = "mw" if cfg.solver == "mwdg2" else "hw"
    fb = build_filters(wavelet)
    tree = build_detail_tree(fld.coeffs, fld.L, fb)
    topo = []
    for c in tree.coeffs:
        z = np.zeros((3,) + c.shape[2:])
        z[:fb.ncoef] = c[0]
        topo.append(z)
    scheme = "dg2" if wavelet == "mw" else "fv1"
    kw = dict(g=cfg.g, h_dry=cfg.h_dry, boundaries=dict(cfg.boundaries), threads=cfg.threads)
    asim = AdaptiveSim(fld.L, fld.M, fld.N, fld.cellsize, fld.xll, fld.yll, fb, topo,
                       tree.normalized(), cfg.epsilon, scheme, manning_fine=setup.manning, kw=kw)
    full = QuadGrid.uniform(fld.L, fld.M, fld.N, fld.cellsize, fld.xll, fld.yll)
    h = setup.h.reshape(3, -1)
    if scheme == "fv1":
        h = h.copy()
        h[1:] = 0.0
    z = asim.leaf_topography(full)
    man = setup.manning.reshape(-1)
    asim.sim = make_nonuniform_sim(full, h, z, scheme, man, **kw)
    adapt(asim)
    return asim


def _leaf_manning(asim: AdaptiveSim, grid: QuadGrid):
    idmap = grid.leaf_index_map()
    return np.bincount(idmap.ravel(), weights=asim.manning_fine.ravel(),
                       minlength=grid.n_leaves) / grid.fine_weights()


def significance_flags(asim: AdaptiveSim, U, grid: QuadGrid, refined):
    """Refinement flags from flow and topography details, before buffering.

    Returns the flags and the dense encoded flow levels.
    """
    fb = asim.fb
    dense, mags = encode_upward(U, grid, refined, fb, details=True)
    norms = np.maximum(1.0, np.abs(U[:, 0]).max(axis=1))
    flags = []
    for lvl in range(asim.L):
        flow = (mags[lvl] / norms[:, None, None]).max(axis=0)
        flags.append(np.maximum(flow, asim.topo_norm_details[lvl]) >= asim.epsilon)
    return ancestor_closure(flags), dense


def adapt(asim: AdaptiveSim):
    """Re-select the leaf set from the current flow and transfer the flow onto it."""
    sim = asim.sim
    grid = sim.grid
    old_refined = grid.flags()
    flags, dense = significance_flags(asim, sim.U, grid, old_refined)
    flags = [dilate(f, diagonal=True) for f in flags]
    flags = grade(ancestor_closure(flags))
    if all(np.array_equal(a, b) for a, b in zip(flags, old_refined)):
        asim.elements.append((sim.t, grid.n_leaves))
        return False
    L, M, N = asim.L, asim.M, asim.N
    old_exists = existing_nodes(old_refined, L, M, N)
    new_exists = existing_nodes(flags, L, M, N)
    decode_missing(dense, old_exists, new_exists, asim.fb)
    new_grid = QuadGrid.from_flags(flags, L, M, N, asim.cellsize, asim.xll, asim.yll)
    n = asim.fb.ncoef
    U = np.zeros((3, 3, new_grid.n_leaves))
    for lvl in range(L + 1):
        sel = np.nonzero(new_grid.level == lvl)[0]
        if sel.size:
            U[:, :n, sel] = dense[lvl][:, :, new_grid.j[sel], new_grid.i[sel]]
    U = su.positivity_limit(U, sim.h_dry)
    z = asim.leaf_topography(new_grid)
    new_grid.payload["z"] = z
    new = make_nonuniform_sim(new_grid, U[0], z, asim.scheme, _leaf_manning(asim, new_grid),
                              qx=U[1], qy=U[2], t=sim.t, dt=sim.dt, outflow=sim.outflow,
                              **asim.kw)
    asim.sim = new
    asim.elements.append((sim.t, new_grid.n_leaves))
    return True


# -- interface states at non-homogeneous faces ----------------------------------------------

@dataclass
class _Interface:
    """Non-homogeneous sub-faces of one orientation and the parents of their fine sides."""

    faces: np.ndarray        # indices into the face table
    fine_is_left: np.ndarray
    parent_level: np.ndarray
    parent_i: np.ndarray
    parent_j: np.ndarray


def _interfaces(grid: QuadGrid, tables):
    out = {}
    for ft in tables:
        lvl_l, lvl_r = grid.level[ft.left], grid.level[ft.right]
        faces = np.nonzero(lvl_l != lvl_r)[0]
        fine_left = lvl_l[faces] > lvl_r[faces]
        fine = np.where(fine_left, ft.left[faces], ft.right[faces])
        out[ft.orientation] = _Interface(faces, fine_left, grid.level[fine] - 1,
                                         grid.i[fine] // 2, grid.j[fine] // 2)
    return out


def encoded_face_states(asim: AdaptiveSim, interfaces, U, z, front):
    """Interior face states with the fine side of every non-homogeneous face
    replaced by the encoded coarse-scale state at the coarse face centre.

    Fine leaves on the ``front`` mask keep their own states.
    """
    sim = asim.sim
    grid = sim.grid
    fb = asim.fb
    refined = grid.flags()
    dense = encode_upward(U, grid, refined, fb)
    states = {}
    for ft in sim.tables:
        itf = interfaces[ft.orientation]
        base = ft
        if itf.faces.size:
            base = _zero_tau(ft)
        left, zl, right, zr, own_l, own_r = interior_face_states(U, z, base)
        if itf.faces.size:
            P = np.zeros((3, 3, itf.faces.size))
            Pz = np.zeros((3, itf.faces.size))
            for lvl in np.unique(itf.parent_level):
                sel = itf.parent_level == lvl
                pj, pi = itf.parent_j[sel], itf.parent_i[sel]
                P[:, :fb.ncoef, sel] = dense[lvl][:, :, pj, pi]
                Pz[:, sel] = asim.topo_levels[lvl][:, pj, pi]
            normal = 1 if ft.orientation == "x" else 2
            # a fine leaf on the left faces the coarse leaf through its parent's high side
            sign = np.where(itf.fine_is_left, 1.0, -1.0)
            f = itf.faces
            lim = P[:, 0] + sign * su.SQRT3 * P[:, normal]
            zlim = Pz[0] + sign * su.SQRT3 * Pz[normal]
            lim = _rotate(lim, ft.orientation)
            # a front leaf keeps its own state so it never exports water it does not hold
            fine = np.where(itf.fine_is_left, ft.left[f], ft.right[f])
            fl = itf.fine_is_left & ~front[fine]
            fr = ~itf.fine_is_left & ~front[fine]
            left[:, f[fl]] = lim[:, fl]
            zl[f[fl]] = zlim[fl]
            right[:, f[fr]] = lim[:, fr]
            zr[f[fr]] = zlim[fr]
        states[ft.orientation] = (left, zl, right, zr, own_l, own_r)
    return states


def _zero_tau(ft):
    return replace(ft, tau_l=np.zeros_like(ft.tau_l), tau_r=np.zeros_like(ft.tau_r))


def adaptive_step(asim: AdaptiveSim, dt: float, adapt_now=True, strict=True) -> AdaptiveSim:
    """One solver step on the current leaf set, then (optionally) adapt."""
    sim = asim.sim
    interfaces = _interfaces(sim.grid, sim.tables)
    has_nh = any(itf.faces.size for itf in interfaces.values())
    states_fn = ((lambda U, z, front: encoded_face_states(asim, interfaces, U, z, front))
                 if has_nh else None)
    step_nonuniform(sim, dt, states_fn, strict)
    if adapt_now:
        adapt(asim)
    return asim


# -- driver ---------------------------------------------------------------------------------

class AdaptiveModel(NonUniformModel):
    def __init__(self, asim: AdaptiveSim, courant, inflows=(), fine_weights=(), adapt_every=1):
        self.asim = asim
        self.courant = courant
        self.inflows = list(inflows)
        self.fine_weights = list(fine_weights)
        self.adapt_every = adapt_every
        self.steps = 0
        self._weights_for = None

    @property
    def sim(self):
        return self.asim.sim

    @property
    def leaf_weights(self):
        grid = self.asim.sim.grid
        if self._weights_for is not grid:
            self._cached = [leaf_inflow_weights(grid, w) for w in self.fine_weights]
            self._weights_for = grid
        return self._cached

    def advance(self, dt):
        self.steps += 1
        adapt_now = self.steps % self.adapt_every == 0
        return _retry_halving(self, dt, lambda dt, strict: adaptive_step(self.asim, dt, adapt_now,
                                                                         strict=strict))


class _SnapshotHooks:
    def __init__(self, out_dir):
        self.out_dir = out_dir

    def on_output(self, model, k):
        write_nug(model.grid, os.path.join(self.out_dir, f"grid_{k:04d}.nug"), model.sim.z)


def build_adaptive_model(cfg: ScenarioConfig, setup: Setup | None = None) -> AdaptiveModel:
    """The model for an MWDG2 or HWFV1 run, with its initial adapted grid."""
    setup = setup or prepare(cfg)
    asim = make_adaptive(setup, cfg)
    return AdaptiveModel(asim, cfg.courant_number, cfg.inflows, setup.inflow_weights,
                         cfg.adapt_every)


def run_adaptive(cfg: ScenarioConfig, out_dir=None):
    """Run an MWDG2 or HWFV1 simulation; also writes ``elements.csv`` and grid snapshots."""
    out_dir = out_dir or cfg.output_dir
    setup = prepare(cfg)
    model = build_adaptive_model(cfg, setup)
    asim = model.asim
    os.makedirs(out_dir, exist_ok=True)
    try:
        result = run_loop(model, setup, out_dir, hooks=_SnapshotHooks(out_dir))
    finally:
        with open(os.path.join(out_dir, "elements.csv"), "w") as fh:
            fh.write("t,leaf_count\n")
            for t, count in asim.elements:
                fh.write(f"{t!r},{count}\n")
    return result


__all__ = ["AdaptiveSim", "make_adaptive", "adapt", "adaptive_step", "run_adaptive",
           "build_adaptive_model",
           "encode_upward", "decode_missing", "encoded_face_states", "AdaptiveModel"]
