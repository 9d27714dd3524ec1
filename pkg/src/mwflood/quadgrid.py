"""Quadtree grid topology.

Leaves are addressed by ``(level, i, j)`` where ``i`` counts columns from the
west and ``j`` rows from the south at that level. Level ``L`` is the finest
(raster) resolution ``R``; a level-``l`` leaf has size ``R * 2**(L - l)``.
The coarsest grid has ``M x N`` level-0 elements.

Refinement is described by per-level boolean arrays ``refined[l]`` of shape
``(N * 2**l, M * 2**l)`` for ``l = 0 .. L-1``: a refined node has four children.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field_core import SQRT3, evaluate
from .raster_io import Raster

DIRECTIONS = ("N", "E", "S", "W")
_STEP = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}


class GridError(ValueError):
    """Structural problem with a quadtree grid."""


# -- Morton addressing -------------------------------------------------------

def _spread_bits(v):
    v = np.asarray(v, dtype=np.uint64)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x3333333333333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x5555555555555555)
    return v


def _compact_bits(v):
    v = np.asarray(v, dtype=np.uint64) & np.uint64(0x5555555555555555)
    v = (v | (v >> np.uint64(1))) & np.uint64(0x3333333333333333)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x00000000FFFFFFFF)
    return v


def morton(i, j):
    """Interleave the bits of ``i`` (even bits) and ``j`` (odd bits)."""
    i_arr, j_arr = np.asarray(i), np.asarray(j)
    if np.any(i_arr < 0) or np.any(j_arr < 0) or np.any(i_arr >= 2**32) or np.any(j_arr >= 2**32):
        raise ValueError("morton indices must lie in [0, 2**32)")
    code = _spread_bits(i_arr) | (_spread_bits(j_arr) << np.uint64(1))
    return int(code) if code.ndim == 0 else code


def morton_inverse(code):
    c = np.asarray(code, dtype=np.uint64)
    i, j = _compact_bits(c), _compact_bits(c >> np.uint64(1))
    if c.ndim == 0:
        return int(i), int(j)
    return i.astype(np.int64), j.astype(np.int64)


# -- refinement flags ----------------------------------------------------------

def level_shape(M, N, level):
    return N * 2 ** level, M * 2 ** level


def empty_flags(L, M, N):
    return [np.zeros(level_shape(M, N, lvl), dtype=bool) for lvl in range(L)]


def full_flags(L, M, N):
    return [np.ones(level_shape(M, N, lvl), dtype=bool) for lvl in range(L)]


def coarsen_any(mask):
    ny, nx = mask.shape
    return mask.reshape(ny // 2, 2, nx // 2, 2).any(axis=(1, 3))


def upsample(arr, factor):
    if factor == 1:
        return arr
    return np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)


def dilate(mask, diagonal=False):
    """Grow ``mask`` by one cell in the four (or eight) neighbour directions."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    if diagonal:
        out[1:, 1:] |= mask[:-1, :-1]
        out[1:, :-1] |= mask[:-1, 1:]
        out[:-1, 1:] |= mask[1:, :-1]
        out[:-1, :-1] |= mask[1:, 1:]
    return out


def ancestor_closure(refined):
    """Flag every ancestor of a flagged node (in place and returned)."""
    for lvl in range(len(refined) - 1, 0, -1):
        refined[lvl - 1] |= coarsen_any(refined[lvl])
    return refined


def existing_nodes(refined, L, M, N):
    """Per-level masks (levels 0..L) of nodes that exist in the tree."""
    exists = [np.ones(level_shape(M, N, 0), dtype=bool)]
    for lvl in range(L):
        exists.append(upsample(exists[lvl] & refined[lvl], 2))
    return exists


def grade(refined):
    """Minimal 2:1 grading of a refinement tree.

    Whenever a level-``m`` node is refined, the parents of its four edge
    neighbours must be refined too, so that no leaf ever borders a leaf more
    than one level finer. Ancestor closure is included. Returns new arrays.
    """
    out = [r.copy() for r in refined]
    for lvl in range(len(out) - 1, 0, -1):
        out[lvl - 1] |= coarsen_any(dilate(out[lvl]))
    return out


def leaves_from_flags(refined, L, M, N):
    """Leaf ``(level, i, j)`` arrays, ordered by level then row-major."""
    exists = existing_nodes(refined, L, M, N)
    levels, iis, jjs = [], [], []
    for lvl in range(L + 1):
        leaf = exists[lvl] if lvl == L else exists[lvl] & ~refined[lvl]
        jj, ii = np.nonzero(leaf)
        levels.append(np.full(ii.size, lvl, dtype=np.int64))
        iis.append(ii.astype(np.int64))
        jjs.append(jj.astype(np.int64))
    return np.concatenate(levels), np.concatenate(iis), np.concatenate(jjs)


def flags_from_leaves(level, i, j, L, M, N):
    """Inverse of :func:`leaves_from_flags`: the refinement tree of a leaf set."""
    refined = empty_flags(L, M, N)
    for lvl in range(1, L + 1):
        sel = level == lvl
        if np.any(sel):
            refined[lvl - 1][j[sel] // 2, i[sel] // 2] = True
    return ancestor_closure(refined)


# -- the grid ------------------------------------------------------------------

@dataclass
class QuadGrid:
    """A set of quadtree leaves tiling an ``M x N`` coarse grid refined up to level ``L``."""

    L: int
    M: int
    N: int
    cellsize: float
    level: np.ndarray
    i: np.ndarray
    j: np.ndarray
    xll: float = 0.0
    yll: float = 0.0
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        self.level = np.asarray(self.level, dtype=np.int64)
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self._lookup = None

    @classmethod
    def from_flags(cls, refined, L, M, N, cellsize, xll=0.0, yll=0.0):
        return cls(L, M, N, cellsize, *leaves_from_flags(refined, L, M, N), xll=xll, yll=yll)

    @classmethod
    def uniform(cls, L, M, N, cellsize, xll=0.0, yll=0.0, level=None):
        lvl = L if level is None else level
        ny, nx = level_shape(M, N, lvl)
        jj, ii = np.divmod(np.arange(nx * ny), nx)
        return cls(L, M, N, cellsize, np.full(nx * ny, lvl), ii, jj, xll=xll, yll=yll)

    @property
    def n_leaves(self) -> int:
        return self.level.size

    @property
    def fine_shape(self):
        return level_shape(self.M, self.N, self.L)

    @property
    def size(self) -> np.ndarray:
        return self.cellsize * 2.0 ** (self.L - self.level)

    @property
    def xc(self) -> np.ndarray:
        return self.xll + (self.i + 0.5) * self.size

    @property
    def yc(self) -> np.ndarray:
        return self.yll + (self.j + 0.5) * self.size

    def flags(self):
        return flags_from_leaves(self.level, self.i, self.j, self.L, self.M, self.N)

    def is_uniform(self) -> bool:
        return bool(np.all(self.level == self.L))

    def fine_weights(self) -> np.ndarray:
        """Number of fine cells covered by each leaf (``4**(L - level)``)."""
        return 4 ** (self.L - self.level)

    def tiles_domain(self) -> bool:
        # no gap (every fine cell owned) and no overlap (areas add up exactly)
        idmap = self.leaf_index_map(check=False)
        return bool(np.all(idmap >= 0)) and int(self.fine_weights().sum()) == idmap.size

    # lookups -------------------------------------------------------------
    def _build_lookup(self):
        codes = morton(self.i, self.j)
        self._lookup = {(int(lv), int(c)): k for k, (lv, c) in enumerate(zip(self.level, codes))}

    def find(self, level, i, j):
        """Index of the leaf ``(level, i, j)`` or ``None``."""
        if self._lookup is None:
            self._build_lookup()
        return self._lookup.get((int(level), morton(int(i), int(j))))

    def leaf_index_map(self, check=True) -> np.ndarray:
        """Fine-resolution map (N*2**L, M*2**L) of the owning leaf index."""
        out = np.full(self.fine_shape, -1, dtype=np.int64)
        for lvl in range(self.L + 1):
            sel = np.nonzero(self.level == lvl)[0]
            if sel.size == 0:
                continue
            coarse = np.full(level_shape(self.M, self.N, lvl), -1, dtype=np.int64)
            coarse[self.j[sel], self.i[sel]] = sel
            fine = upsample(coarse, 2 ** (self.L - lvl))
            np.copyto(out, fine, where=fine >= 0)
        if check and np.any(out < 0):
            raise GridError("leaves do not tile the domain")
        return out

    def locate(self, x, y) -> int:
        """Index of the leaf containing point ``(x, y)``."""
        nyf, nxf = self.fine_shape
        fi = int(np.clip(np.floor((x - self.xll) / self.cellsize), 0, nxf - 1))
        fj = int(np.clip(np.floor((y - self.yll) / self.cellsize), 0, nyf - 1))
        for lvl in range(self.L, -1, -1):
            shift = self.L - lvl
            k = self.find(lvl, fi >> shift, fj >> shift)
            if k is not None:
                return k
        raise GridError(f"no leaf contains ({x}, {y})")


def neighbors(grid: QuadGrid, leaf: int, direction: str):
    """Leaves sharing a positive-length edge with ``leaf`` on side ``direction``.

    Returns the string ``"boundary"`` at the domain edge. The lookup probes the
    same-level Morton key, then its ancestors, then descends into children.
    """
    if not 0 <= leaf < grid.n_leaves:
        raise GridError(f"leaf {leaf} is not in the grid")
    lvl, i, j = int(grid.level[leaf]), int(grid.i[leaf]), int(grid.j[leaf])
    di, dj = _STEP[direction]
    ni, nj = i + di, j + dj
    ny, nx = level_shape(grid.M, grid.N, lvl)
    if not (0 <= ni < nx and 0 <= nj < ny):
        return "boundary"
    for up in range(lvl + 1):
        k = grid.find(lvl - up, ni >> up, nj >> up)
        if k is not None:
            return [k]
    # neighbour region is refined: collect descendants touching the shared edge
    found = []
    stack = [(lvl, ni, nj)]
    while stack:
        lv, a, b = stack.pop()
        k = grid.find(lv, a, b)
        if k is not None:
            found.append(k)
            continue
        if lv >= grid.L:
            raise GridError("grid does not tile the domain")
        kids = [(2 * a + dx, 2 * b + dy) for dy in (0, 1) for dx in (0, 1)]
        if direction == "E":
            kids = [(ka, kb) for ka, kb in kids if ka % 2 == 0]
        elif direction == "W":
            kids = [(ka, kb) for ka, kb in kids if ka % 2 == 1]
        elif direction == "N":
            kids = [(ka, kb) for ka, kb in kids if kb % 2 == 0]
        else:
            kids = [(ka, kb) for ka, kb in kids if kb % 2 == 1]
        stack.extend((lv + 1, ka, kb) for ka, kb in reversed(kids))
    return sorted(found)


# -- faces -----------------------------------------------------------------------

@dataclass
class FaceSet:
    """Interior (sub-)faces and boundary faces of a leaf set, for one orientation.

    For x-normal faces ``left`` is the western leaf and ``right`` the eastern;
    for y-normal faces ``left`` is the southern leaf and ``right`` the northern.
    ``along`` is the coordinate of the (sub-)face centre along the face
    (y for x-normal faces, x for y-normal faces).
    """

    orientation: str            # "x" or "y" (direction of the face normal)
    left: np.ndarray
    right: np.ndarray
    length: np.ndarray
    along: np.ndarray
    position: np.ndarray        # coordinate of the face line itself
    # boundary faces: one per leaf edge segment on the domain boundary
    b_leaf: np.ndarray
    b_side: np.ndarray          # 0 = low edge (W or S), 1 = high edge (E or N)
    b_length: np.ndarray
    b_along: np.ndarray

    @property
    def n_faces(self):
        return self.left.size

    def homogeneous(self, level) -> np.ndarray:
        return level[self.left] == level[self.right]


@dataclass
class Faces:
    x: FaceSet
    y: FaceSet

    def __iter__(self):
        return iter((self.x, self.y))


def _group_faces(a, b, along_c, n_leaves, cellsize):
    keep = a != b
    a, b, along_c = a[keep], b[keep], along_c[keep]
    code = a * n_leaves + b
    uniq, inv, counts = np.unique(code, return_inverse=True, return_counts=True)
    along = np.bincount(inv, weights=along_c, minlength=uniq.size) / counts
    return uniq // n_leaves, uniq % n_leaves, counts * cellsize, along


def _group_boundary(ids, along_c, cellsize):
    uniq, inv, counts = np.unique(ids, return_inverse=True, return_counts=True)
    along = np.bincount(inv, weights=along_c, minlength=uniq.size) / counts
    return uniq, counts * cellsize, along


def enumerate_faces(grid: QuadGrid, require_graded=True) -> Faces:
    """All faces of the leaf set, each interior leaf-boundary segment exactly once.

    Faces between leaves of different levels are split into sub-faces of the
    finer leaf's size.
    """
    idmap = grid.leaf_index_map()
    R = grid.cellsize
    n = grid.n_leaves
    nyf, nxf = idmap.shape
    yc_f = grid.yll + (np.arange(nyf) + 0.5) * R
    xc_f = grid.xll + (np.arange(nxf) + 0.5) * R

    sets = []
    # x-normal faces: between columns
    a, b = idmap[:, :-1], idmap[:, 1:]
    along_c = np.broadcast_to(yc_f[:, None], a.shape)
    left, right, length, along = _group_faces(a.ravel(), b.ravel(), along_c.ravel(), n, R)
    lvl = grid.level
    pos = np.where(lvl[left] >= lvl[right],
                   grid.xll + (grid.i[left] + 1) * grid.size[left],
                   grid.xll + grid.i[right] * grid.size[right])
    bl = []
    for side, col in ((0, 0), (1, nxf - 1)):
        ids, blen, balong = _group_boundary(idmap[:, col], yc_f, R)
        bl.append((ids, np.full(ids.size, side), blen, balong))
    b_leaf, b_side, b_len, b_along = (np.concatenate(t) for t in zip(*bl))
    sets.append(FaceSet("x", left, right, length, along, pos, b_leaf, b_side, b_len, b_along))

    # y-normal faces: between rows
    a, b = idmap[:-1, :], idmap[1:, :]
    along_c = np.broadcast_to(xc_f[None, :], a.shape)
    left, right, length, along = _group_faces(a.ravel(), b.ravel(), along_c.ravel(), n, R)
    pos = np.where(lvl[left] >= lvl[right],
                   grid.yll + (grid.j[left] + 1) * grid.size[left],
                   grid.yll + grid.j[right] * grid.size[right])
    bl = []
    for side, row in ((0, 0), (1, nyf - 1)):
        ids, blen, balong = _group_boundary(idmap[row, :], xc_f, R)
        bl.append((ids, np.full(ids.size, side), blen, balong))
    b_leaf, b_side, b_len, b_along = (np.concatenate(t) for t in zip(*bl))
    sets.append(FaceSet("y", left, right, length, along, pos, b_leaf, b_side, b_len, b_along))

    faces = Faces(*sets)
    if require_graded and not is_graded(grid, faces):
        raise GridError("grid is not 2:1 graded")
    return faces


def is_graded(grid: QuadGrid, faces: Faces | None = None) -> bool:
    """Exhaustive 2:1 scan over every face."""
    if faces is None:
        faces = enumerate_faces(grid, require_graded=False)
    for fs in faces:
        if fs.n_faces and np.max(np.abs(grid.level[fs.left] - grid.level[fs.right])) > 1:
            return False
    return True


# -- resampling and reporting -----------------------------------------------------

def sample_to_raster(grid: QuadGrid, coeffs, nodata=-9999.0, active=None) -> Raster:
    """Evaluate per-leaf planar coefficients ``coeffs`` (3, n) or (n,) at fine-cell centres."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim == 1:
        coeffs = np.stack([coeffs, np.zeros_like(coeffs), np.zeros_like(coeffs)])
    elif coeffs.shape[0] == 1:
        coeffs = np.concatenate([coeffs, np.zeros((2,) + coeffs.shape[1:])])
    idmap = grid.leaf_index_map()
    nyf, nxf = idmap.shape
    R = grid.cellsize
    xf = grid.xll + (np.arange(nxf) + 0.5) * R
    yf = grid.yll + (np.arange(nyf) + 0.5) * R
    X, Y = np.meshgrid(xf, yf)
    size = grid.size[idmap]
    vals = evaluate(coeffs[:, idmap], (grid.xc[idmap], grid.yc[idmap]), size, (X, Y))
    if active is not None:
        vals = np.where(active, vals, nodata)
    return Raster.from_south_up(vals, grid.xll, grid.yll, R, nodata)


def level_histogram(grid: QuadGrid):
    """Leaf count per level and the percentage of domain area each level covers."""
    counts = np.bincount(grid.level, minlength=grid.L + 1)
    area = np.bincount(grid.level, weights=grid.fine_weights().astype(float), minlength=grid.L + 1)
    return counts, 100.0 * area / area.sum()


def stats_report(grid: QuadGrid) -> str:
    counts, pct = level_histogram(grid)
    lines = [f"leaves: {grid.n_leaves}",
             f"uniform level-{grid.L} count: {grid.M * grid.N * 4 ** grid.L}",
             f"{'level':>5} {'size_m':>10} {'leaves':>8} {'area_%':>8}"]
    for lvl in range(grid.L + 1):
        if counts[lvl] == 0 and pct[lvl] == 0:
            continue
        size = grid.cellsize * 2 ** (grid.L - lvl)
        lines.append(f"{lvl:>5} {size:>10.6g} {counts[lvl]:>8d} {pct[lvl]:>7.2f}%")
    return "\n".join(lines)


# -- .nug files -------------------------------------------------------------------

def write_nug(grid: QuadGrid, path, z=None) -> None:
    """Write the leaf set with per-leaf planar topography ``z`` (3, n)."""
    if z is None:
        z = grid.payload.get("z")
    if z is None:
        z = np.zeros((3, grid.n_leaves))
    z = np.asarray(z, dtype=float)
    if z.shape[0] == 1:
        z = np.concatenate([z, np.zeros((2, z.shape[1]))])
    with open(path, "w") as fh:
        fh.write("# non-uniform quadtree grid\n")
        fh.write(f"L {grid.L}\nM {grid.M}\nN {grid.N}\n")
        fh.write(f"cellsize {grid.cellsize!r}\norigin {grid.xll!r} {grid.yll!r}\n")
        fh.write(f"leaves {grid.n_leaves}\n")
        for k in range(grid.n_leaves):
            fh.write(f"{grid.level[k]} {grid.i[k]} {grid.j[k]} "
                     f"{z[0, k]:.15e} {z[1, k]:.15e} {z[2, k]:.15e}\n")


def read_nug(path) -> QuadGrid:
    head = {}
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] in ("L", "M", "N", "cellsize", "origin", "leaves"):
                head[parts[0]] = parts[1:]
                continue
            if len(parts) != 6:
                raise GridError(f"{path}: line {lineno}: expected 'level i j z0 z1x z1y'")
            rows.append([float(p) for p in parts])
    for key in ("L", "M", "N", "cellsize", "origin"):
        if key not in head:
            raise GridError(f"{path}: missing header '{key}'")
    data = np.array(rows).reshape(-1, 6)
    if "leaves" in head and int(head["leaves"][0]) != data.shape[0]:
        raise GridError(f"{path}: header says {head['leaves'][0]} leaves, found {data.shape[0]}")
    grid = QuadGrid(int(head["L"][0]), int(head["M"][0]), int(head["N"][0]),
                    float(head["cellsize"][0]), data[:, 0].astype(int), data[:, 1].astype(int),
                    data[:, 2].astype(int), xll=float(head["origin"][0]), yll=float(head["origin"][1]))
    grid.payload["z"] = data[:, 3:].T.copy()
    return grid
