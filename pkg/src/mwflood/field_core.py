"""Scaled Legendre planar basis and projection of rasters onto elements.

A scalar field on a square element of size ``R`` centred at ``(xc, yc)`` is the
plane ``c0 + c1x * 2*sqrt(3)*(x - xc)/R + c1y * 2*sqrt(3)*(y - yc)/R``. The
basis is orthonormal with respect to the element mean, so ``c0`` is the
element average. Coefficient arrays throughout the package put the
coefficient index first: ``coeffs[0]`` is the average, ``coeffs[1]`` the
x-slope and ``coeffs[2]`` the y-slope.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .raster_io import ConfigError, Raster

SQRT3 = np.sqrt(3.0)
WALL_HEIGHT = 100.0


class PlanarCoeffs(NamedTuple):
    c0: float
    c1x: float
    c1y: float


FACES = ("N", "E", "S", "W")


def project_vertices(z_nw, z_ne, z_sw, z_se) -> PlanarCoeffs:
    """Planar coefficients from the four corner values of an element.

    Works elementwise on arrays as well as on scalars.
    """
    vals = [np.asarray(v, dtype=float) for v in (z_nw, z_ne, z_sw, z_se)]
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise ValueError("vertex values must be finite")
    z_nw, z_ne, z_sw, z_se = vals
    c0 = (z_ne + z_nw + z_se + z_sw) / 4.0
    c1x = (z_ne - z_nw + z_se - z_sw) / (4.0 * SQRT3)
    c1y = (z_ne - z_se + z_nw - z_sw) / (4.0 * SQRT3)
    if c0.ndim == 0:
        return PlanarCoeffs(float(c0), float(c1x), float(c1y))
    return PlanarCoeffs(c0, c1x, c1y)


def evaluate(c, centre, size, point):
    """Value of the planar expansion ``c`` at ``point``."""
    if np.any(np.asarray(size) <= 0):
        raise ValueError("element size must be positive")
    xc, yc = centre
    x, y = point
    return (c[0] + c[1] * (2 * SQRT3 * (x - xc) / size)
            + c[2] * (2 * SQRT3 * (y - yc) / size))


def face_limit(c, face: str, size=1.0):
    """Limit of the planar expansion at the centre of ``face`` (N, E, S or W)."""
    if np.any(np.asarray(size) <= 0):
        raise ValueError("element size must be positive")
    if face == "E":
        return c[0] + SQRT3 * c[1]
    if face == "W":
        return c[0] - SQRT3 * c[1]
    if face == "N":
        return c[0] + SQRT3 * c[2]
    if face == "S":
        return c[0] - SQRT3 * c[2]
    raise ValueError(f"unknown face {face!r}")


def project_vertex_grid(vertices) -> np.ndarray:
    """Project a south-up grid of vertex samples, shape (ny+1, nx+1), onto elements.

    Returns coefficients of shape (3, ny, nx).
    """
    v = np.asarray(vertices, dtype=float)
    sw, se = v[:-1, :-1], v[:-1, 1:]
    nw, ne = v[1:, :-1], v[1:, 1:]
    return np.array(project_vertices(nw, ne, sw, se))


def cell_to_vertex(cells) -> np.ndarray:
    """Half-cell shift: cell-centred samples (ny, nx) to vertex samples (ny+1, nx+1).

    Each vertex takes the mean of the (up to four) cells touching it, using
    edge replication outside the grid.
    """
    c = np.pad(np.asarray(cells, dtype=float), 1, mode="edge")
    return 0.25 * (c[:-1, :-1] + c[:-1, 1:] + c[1:, :-1] + c[1:, 1:])


@dataclass
class ProjectedField:
    """Planar topography on the padded level-L element grid (south-up)."""

    coeffs: np.ndarray          # (3, ny, nx)
    vertices: np.ndarray        # (ny+1, nx+1) vertex elevations after nodata/padding rules
    active: np.ndarray          # (ny, nx) False on padded or nodata elements
    xll: float
    yll: float
    cellsize: float
    L: int
    M: int
    N: int

    @property
    def shape(self):
        return self.coeffs.shape[1:]


def dem_vertices(dem: Raster, registration: str = "vertex"):
    """South-up vertex elevations and a per-element nodata mask for ``dem``.

    nodata samples become walls ``WALL_HEIGHT`` metres above the highest finite
    elevation.
    """
    grid = dem.south_up().copy()
    nodata = grid == dem.nodata
    finite = grid[~nodata]
    if finite.size == 0:
        raise ConfigError("DEM contains no valid elevations")
    grid[nodata] = finite.max() + WALL_HEIGHT
    if registration == "cell":
        verts = cell_to_vertex(grid)
        bad_elem = nodata
        xll, yll = dem.xll, dem.yll
    elif registration == "vertex":
        if min(grid.shape) < 2:
            raise ConfigError("vertex-registered DEM needs at least 2x2 samples")
        verts = grid
        bad_elem = nodata[:-1, :-1] | nodata[:-1, 1:] | nodata[1:, :-1] | nodata[1:, 1:]
        xll, yll = dem.xll, dem.yll
    else:
        raise ConfigError(f"unknown DEM registration {registration!r}")
    return verts, ~bad_elem, xll, yll


def project_raster(dem: Raster, L: int = 0, registration: str = "vertex") -> ProjectedField:
    """Project a DEM onto the element grid at level ``L``.

    The element grid is padded on its north and east sides (edge-replicated
    elevations) up to the next multiple of ``2**L``; padded elements are
    flagged inactive.
    """
    if L < 0:
        raise ConfigError("max level must be >= 0")
    verts, active, xll, yll = dem_vertices(dem, registration)
    ny, nx = active.shape
    step = 2 ** L
    N, M = -(-ny // step), -(-nx // step)
    pad_y, pad_x = N * step - ny, M * step - nx
    if pad_x or pad_y:
        verts = np.pad(verts, ((0, pad_y), (0, pad_x)), mode="edge")
        active = np.pad(active, ((0, pad_y), (0, pad_x)), constant_values=False)
    return ProjectedField(project_vertex_grid(verts), verts, active,
                          float(xll), float(yll), float(dem.cellsize), L, M, N)


def pad_vertex_field(values, shape) -> np.ndarray:
    """Edge-pad a south-up vertex grid to ``shape`` (used for depth rasters)."""
    values = np.asarray(values, dtype=float)
    return np.pad(values, ((0, shape[0] - values.shape[0]), (0, shape[1] - values.shape[1])),
                  mode="edge")
