"""Multiresolution analysis with planar multiwavelets (MW) and Haar wavelets (HW).

Children of a quadtree node are stored in the order SW=0, SE=1, NW=2, NE=3.
Writing the four children in column-major numbering ([0]=SW, [1]=NW,
[2]=SE, [3]=NE), filter slot ``s`` acts on child ``[(0, 2, 1, 3)[s]]``, which
is exactly storage slot ``s``; that is why the filters below are indexed by
storage order.

Filters act on coefficients normalised by the element mean, so encoding is
``parent = sum_s HH[s] @ child[s]`` while decoding carries a factor 4:
``child[s] = 4 * (HH[s].T @ parent + GA[s].T @ dH + GB[s].T @ dV + GC[s].T @ dD)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .field_core import SQRT3, ProjectedField, project_raster
from .quadgrid import QuadGrid, ancestor_closure, grade, level_shape
from .raster_io import Raster

# child offsets in storage order SW, SE, NW, NE
CHILD_SX = np.array([-1.0, 1.0, -1.0, 1.0])
CHILD_SY = np.array([-1.0, -1.0, 1.0, 1.0])


class DetailTriple(NamedTuple):
    dH: np.ndarray
    dV: np.ndarray
    dD: np.ndarray


@dataclass(frozen=True)
class FilterBank:
    kind: str
    ncoef: int
    enc: np.ndarray   # (4n, 4n): stacked children -> [parent, dH, dV, dD]
    dec: np.ndarray   # (4n, 4n): the inverse, equal to 4 * enc.T

    def _block(self, row):
        n = self.ncoef
        return np.stack([self.enc[row * n:(row + 1) * n, s * n:(s + 1) * n] for s in range(4)])

    @property
    def HH(self):
        return self._block(0)

    @property
    def GA(self):
        return self._block(1)

    @property
    def GB(self):
        return self._block(2)

    @property
    def GC(self):
        return self._block(3)


def _planar_lowpass():
    """Parent planar coefficients as functions of the 12 child planar coefficients."""
    rows = np.zeros((3, 12))
    for s in range(4):
        # parent slope restricted to a child = half the child slope + offset of its centre
        rows[0, 3 * s] = 1.0
        rows[1, 3 * s] = SQRT3 / 2 * CHILD_SX[s]
        rows[1, 3 * s + 1] = 0.5
        rows[2, 3 * s] = SQRT3 / 2 * CHILD_SY[s]
        rows[2, 3 * s + 2] = 0.5
    return rows / 4.0


def _planar_highpass(low):
    """Nine orthonormal detail rows spanning the complement of ``low``.

    Candidates are the tensor products of the 1D order-2 multiwavelets with
    the 1D scaling functions (H: x-wavelet, V: y-wavelet, D: both),
    restricted to planar child modes and projected off the low-pass space.
    They are then orthonormalised symmetrically, which keeps each row as
    close as possible to its tensor-product candidate.
    """
    h1 = {-1.0: np.array([[1.0, 0.0], [-SQRT3 / 2, 0.5]]) / 2,
          1.0: np.array([[1.0, 0.0], [SQRT3 / 2, 0.5]]) / 2}
    wa = np.array([1.0, SQRT3, -1.0, SQRT3]) / np.sqrt(8.0)
    wb = np.array([0.0, 1.0, 0.0, -1.0]) / np.sqrt(2.0)
    g1 = {-1.0: np.array([wa[:2], wb[:2]]) / np.sqrt(2.0),
          1.0: np.array([wa[2:], wb[2:]]) / np.sqrt(2.0)}
    planar_modes = {(0, 0): 0, (1, 0): 1, (0, 1): 2}

    def tensor(fx, fy, kx, ky):
        row = np.zeros(12)
        for s in range(4):
            for (mx, my), m in planar_modes.items():
                row[3 * s + m] = fx[CHILD_SX[s]][kx, mx] * fy[CHILD_SY[s]][ky, my]
        return 2.0 * row

    ortho_low = 2.0 * low
    cands = []
    for fx, fy in ((g1, h1), (h1, g1), (g1, g1)):
        for kx, ky in ((0, 0), (1, 0), (0, 1)):
            r = tensor(fx, fy, kx, ky)
            cands.append(r - ortho_low.T @ (ortho_low @ r))
    u, _, vt = np.linalg.svd(np.array(cands), full_matrices=False)
    high = u @ vt
    high[np.abs(high) < 1e-14] = 0.0
    return high / 2.0


@lru_cache(maxsize=None)
def build_filters(kind: str = "mw") -> FilterBank:
    kind = kind.lower()
    if kind == "mw":
        low = _planar_lowpass()
        enc = np.vstack([low, _planar_highpass(low)])
        n = 3
    elif kind == "hw":
        enc = np.array([np.ones(4), CHILD_SX, CHILD_SY, CHILD_SX * CHILD_SY]) / 4.0
        n = 1
    else:
        raise ValueError(f"unknown wavelet kind {kind!r} (use 'mw' or 'hw')")
    enc.setflags(write=False)
    dec = 4.0 * enc.T
    dec.setflags(write=False)
    return FilterBank(kind, n, enc, dec)


# -- single-node transforms -----------------------------------------------------

def encode(children, fb: FilterBank):
    """Parent coefficients and details from four children (storage order)."""
    c = np.asarray(children, dtype=float).reshape(4, fb.ncoef)
    out = fb.enc @ c.reshape(-1)
    n = fb.ncoef
    return out[:n], DetailTriple(out[n:2 * n], out[2 * n:3 * n], out[3 * n:])


def decode(parent, details, fb: FilterBank):
    """Four children (storage order) from parent coefficients and details."""
    n = fb.ncoef
    vec = np.concatenate([np.asarray(parent, dtype=float).reshape(n)]
                         + [np.asarray(d, dtype=float).reshape(n) for d in details])
    return (fb.dec @ vec).reshape(4, n)


def normalize_detail(details, global_norm):
    """Largest absolute detail entry scaled by ``max(1, global_norm)``."""
    mag = max(float(np.max(np.abs(np.asarray(d)))) for d in details)
    return mag / max(1.0, float(global_norm))


# -- whole-level transforms -------------------------------------------------------

def gather_children(fine):
    """(..., n, 2Ny, 2Nx) -> (..., 4n, Ny, Nx) with children stacked in storage order."""
    *lead, n, ny, nx = fine.shape
    a = fine.reshape(*lead, n, ny // 2, 2, nx // 2, 2)
    k = len(lead)
    # axes: lead..., n, Y, dy, X, dx  ->  lead..., dy, dx, n, Y, X
    order = list(range(k)) + [k + 2, k + 4, k, k + 1, k + 3]
    return a.transpose(order).reshape(*lead, 4 * n, ny // 2, nx // 2)


def scatter_children(stacked, n):
    """Inverse of :func:`gather_children`."""
    *lead, _, ny, nx = stacked.shape
    k = len(lead)
    a = stacked.reshape(*lead, 2, 2, n, ny, nx)
    # lead..., dy, dx, n, Y, X -> lead..., n, Y, dy, X, dx
    order = list(range(k)) + [k + 2, k + 3, k, k + 4, k + 1]
    return a.transpose(order).reshape(*lead, n, 2 * ny, 2 * nx)


def encode_level(fine, fb: FilterBank):
    """Encode a whole level: returns ``(coarse, details)``.

    ``fine`` has shape (..., n, ny, nx); ``details`` has shape (..., 3, n, ny/2, nx/2).
    """
    stacked = gather_children(fine)
    out = np.einsum("ij,...jyx->...iyx", fb.enc, stacked)
    n = fb.ncoef
    *lead, _, ny, nx = out.shape
    coarse = out[..., :n, :, :]
    details = out[..., n:, :, :].reshape(*lead, 3, n, ny, nx)
    return coarse, details


def decode_level(coarse, details, fb: FilterBank):
    n = fb.ncoef
    *lead, _, _, ny, nx = details.shape
    vec = np.concatenate([coarse, details.reshape(*lead, 3 * n, ny, nx)], axis=-3)
    return scatter_children(np.einsum("ij,...jyx->...iyx", fb.dec, vec), n)


def node_magnitude(details):
    """Max absolute detail entry per node, shape (..., Ny, Nx) from (..., 3, n, Ny, Nx)."""
    return np.abs(details).max(axis=(-4, -3))


# -- detail trees and static grids -------------------------------------------------

@dataclass
class DetailTree:
    """Encoded hierarchy of one or more fields.

    ``coeffs[l]`` has shape (nfields, n, N*2**l, M*2**l) for l = 0..L and holds
    the exact encoded coefficients at every level; ``details[l]`` has shape
    (nfields, 3, n, N*2**l, M*2**l) for l = 0..L-1.
    """

    L: int
    M: int
    N: int
    fb: FilterBank
    coeffs: list
    details: list
    norms: np.ndarray

    def normalized(self, field_norms=None):
        """Per-level arrays of the normalised detail, max over fields."""
        norms = self.norms if field_norms is None else np.asarray(field_norms, dtype=float)
        scale = 1.0 / np.maximum(1.0, norms)
        out = []
        for d in self.details:
            mag = np.abs(d).max(axis=(1, 2))          # (nfields, Ny, Nx)
            out.append((mag * scale[:, None, None]).max(axis=0))
        return out


def build_detail_tree(fine, L: int, fb: FilterBank) -> DetailTree:
    """Encode ``fine`` (nfields, ncoef, ny, nx) or (ncoef, ny, nx) ``L`` times."""
    fine = np.asarray(fine, dtype=float)
    if fine.ndim == 3:
        fine = fine[None]
    fine = fine[:, :fb.ncoef]
    ny, nx = fine.shape[-2:]
    step = 2 ** L
    if ny % step or nx % step or ny == 0 or nx == 0:
        raise ValueError(f"a {ny}x{nx} grid is not a full quadtree domain for L={L}")
    M, N = nx // step, ny // step
    norms = np.abs(fine[:, 0]).reshape(fine.shape[0], -1).max(axis=1)
    coeffs = [None] * (L + 1)
    details = [None] * L
    coeffs[L] = fine
    for lvl in range(L - 1, -1, -1):
        coeffs[lvl], details[lvl] = encode_level(coeffs[lvl + 1], fb)
    return DetailTree(L, M, N, fb, coeffs, details, norms)


def flag_significant(tree: DetailTree, epsilon: float, field_norms=None):
    """Refinement flags (levels 0..L-1): normalised detail >= epsilon, ancestor-closed."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    flags = [d >= epsilon for d in tree.normalized(field_norms)]
    return ancestor_closure(flags)


def decode_all(tree: DetailTree):
    """Top-down reconstruction of every level from level 0 and the stored details."""
    levels = [tree.coeffs[0]]
    for lvl in range(tree.L):
        levels.append(decode_level(levels[lvl], tree.details[lvl], tree.fb))
    return levels


def assemble_grid(tree: DetailTree, flags, cellsize=1.0, xll=0.0, yll=0.0) -> QuadGrid:
    """Leaf set of the flag tree with coefficients decoded from level 0.

    Returns a grid whose ``payload["coeffs"]`` has shape (nfields, 3, n_leaves);
    for a single field ``payload["z"]`` is that field's (3, n_leaves) slice.
    HW coefficients are padded with zero slopes.
    """
    grid = QuadGrid.from_flags(flags, tree.L, tree.M, tree.N, cellsize, xll, yll)
    levels = decode_all(tree)
    nf = tree.coeffs[0].shape[0]
    out = np.zeros((nf, 3, grid.n_leaves))
    for lvl in range(tree.L + 1):
        sel = np.nonzero(grid.level == lvl)[0]
        if sel.size:
            out[:, :tree.fb.ncoef, sel] = levels[lvl][:, :, grid.j[sel], grid.i[sel]]
    grid.payload["coeffs"] = out
    grid.payload["z"] = out[0]
    return grid


def leaf_values(levels, grid: QuadGrid, ncoef=3):
    """Pick per-leaf coefficients from dense per-level arrays (nfields, n, ...)."""
    nf = levels[0].shape[0]
    out = np.zeros((nf, ncoef, grid.n_leaves))
    n = levels[0].shape[1]
    for lvl in range(grid.L + 1):
        sel = np.nonzero(grid.level == lvl)[0]
        if sel.size:
            out[:, :n, sel] = levels[lvl][:, :, grid.j[sel], grid.i[sel]]
    return out


def static_grid(field: ProjectedField, epsilon: float, graded: bool = True,
                wavelet: str = "mw") -> QuadGrid:
    """Threshold, optionally grade, and assemble the topography of ``field``.

    Grading-forced refinements decode with the stored details, so leaf
    topography is always the exact encoded topography at that level.
    """
    fb = build_filters(wavelet)
    tree = build_detail_tree(field.coeffs, field.L, fb)
    flags = flag_significant(tree, epsilon)
    if graded:
        flags = grade(flags)
    grid = assemble_grid(tree, flags, field.cellsize, field.xll, field.yll)
    grid.payload["tree"] = tree
    return grid


def generate_static_grid(dem: Raster, epsilon: float = 1e-3, L: int = 0, graded: bool = True,
                         wavelet: str = "mw", registration: str = "vertex") -> QuadGrid:
    """DEM -> planar projection -> detail tree -> significance -> grading -> leaves."""
    field = project_raster(dem, L, registration)
    grid = static_grid(field, epsilon, graded, wavelet)
    grid.payload["active"] = field.active
    return grid


__all__ = [
    "FilterBank", "DetailTriple", "DetailTree", "build_filters", "encode", "decode",
    "normalize_detail", "encode_level", "decode_level", "build_detail_tree",
    "flag_significant", "assemble_grid", "static_grid", "generate_static_grid",
    "level_shape",
]
