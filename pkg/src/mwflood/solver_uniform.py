"""Raster-based shallow-water solvers on the uniform finest grid: DG2, FV1 and ACC.

Flow coefficients are stored as ``U[field, coeff, row, col]`` with fields
``(h, qx, qy)`` and coefficients ``(average, x-slope, y-slope)``; topography is
``z[coeff, row, col]``. Rows run south to north.

The flux kernels (:func:`hll_flux`, :func:`revise_face_states`,
:func:`face_fluxes`) and the element operator (:func:`element_operator`) work
elementwise on arrays of any shape and are shared with the non-uniform and
adaptive solvers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np

from .field_core import SQRT3
from .raster_io import ConfigError, EDGES, hydrograph_volume

G = 9.80665
H_DRY = 1e-6
H_FRONT = 1e-3


class NumericalBlowUp(RuntimeError):
    """Raised when the flow state stops being finite."""

    def __init__(self, t, element):
        super().__init__(f"non-finite state at t={t:.6g} s, element {element}")
        self.t = t
        self.element = element


class PositivityViolation(RuntimeError):
    """A stage produced a clearly negative depth average; retry with a smaller step."""

    def __init__(self, t, depth):
        super().__init__(f"negative depth average {depth:.3e} m in the step from t={t:.6g} s")
        self.t = t
        self.depth = depth


# averages below -NEG_TOL are not clipped silently (clipping would create mass)
NEG_TOL = 1e-12
MAX_HALVINGS = 30


# -- pointwise kernels --------------------------------------------------------------

def velocity(h, q, h_dry=H_DRY):
    """``q / h`` on wet points, zero where ``h <= h_dry``."""
    wet = h > h_dry
    return np.where(wet, q / np.where(wet, h, 1.0), 0.0)


def normal_flux(h, qn, qt, g=G, h_dry=H_DRY):
    """Physical flux through a face whose normal is +x in the rotated frame."""
    un = velocity(h, qn, h_dry)
    ut = velocity(h, qt, h_dry)
    wet = h > h_dry
    return np.array([np.where(wet, qn, 0.0), qn * un + 0.5 * g * h * h, qn * ut])


def flux_x(h, qx, qy, g=G, h_dry=H_DRY):
    return normal_flux(h, qx, qy, g, h_dry)


def flux_y(h, qx, qy, g=G, h_dry=H_DRY):
    f = normal_flux(h, qy, qx, g, h_dry)
    return f[[0, 2, 1]]


def hll_flux(hL, qnL, qtL, hR, qnR, qtR, g=G, h_dry=H_DRY):
    """HLL flux for states already rotated so the face normal points along +x.

    Wave speeds use the two-rarefaction estimate; a dry side uses the
    dry-front speed of the wet side. Returns an array of shape (3, ...)
    holding the mass, normal-momentum and tangential-momentum fluxes.
    """
    hL, hR = np.asarray(hL, dtype=float), np.asarray(hR, dtype=float)
    if np.any(hL < 0) or np.any(hR < 0):
        raise ValueError("negative depth passed to the Riemann solver")
    wetL, wetR = hL > h_dry, hR > h_dry
    uL, uR = velocity(hL, qnL, h_dry), velocity(hR, qnR, h_dry)
    cL, cR = np.sqrt(g * hL), np.sqrt(g * hR)
    h_star = ((cL + cR) / 2 + (uL - uR) / 4) ** 2 / g
    u_star = (uL + uR) / 2 + cL - cR
    c_star = np.sqrt(g * h_star)
    SL = np.where(wetL, np.minimum(uL - cL, u_star - c_star), uR - 2 * cR)
    SR = np.where(wetR, np.maximum(uR + cR, u_star + c_star), uL + 2 * cL)

    FL = normal_flux(hL, qnL, qtL, g, h_dry)
    FR = normal_flux(hR, qnR, qtR, g, h_dry)
    UL = np.array([hL, np.where(wetL, qnL, 0.0), np.where(wetL, qtL, 0.0)])
    UR = np.array([hR, np.where(wetR, qnR, 0.0), np.where(wetR, qtR, 0.0)])
    den = SR - SL
    safe = np.where(den > 0, den, 1.0)
    F_mid = (SR * FL - SL * FR + SL * SR * (UR - UL)) / safe
    F = np.where(SL >= 0, FL, np.where(SR <= 0, FR, F_mid))
    return np.where(wetL | wetR, F, 0.0)


def revise_face_states(hL, qnL, qtL, zL, hR, qnR, qtR, zR, h_dry=H_DRY):
    """Hydrostatic reconstruction of the two face states.

    Returns ``(hL*, qnL*, qtL*, hR*, qnR*, qtR*, z*)``. Velocities are kept
    where a side is wet and discharges are zeroed where it is dry.
    """
    z_star = np.maximum(zL, zR)
    hLs = np.maximum(0.0, hL + zL - z_star)
    hRs = np.maximum(0.0, hR + zR - z_star)
    return (hLs, hLs * velocity(hL, qnL, h_dry), hLs * velocity(hL, qtL, h_dry),
            hRs, hRs * velocity(hR, qnR, h_dry), hRs * velocity(hR, qtR, h_dry), z_star)


def face_fluxes(hL, qnL, qtL, zL, hR, qnR, qtR, zR, hL_own=None, hR_own=None,
                g=G, h_dry=H_DRY):
    """Well-balanced numerical fluxes seen by the left and right elements of a face.

    ``hL_own``/``hR_own`` are each element's own face-centre depth, used in
    the pressure correction that balances the bed-slope source; they default
    to ``hL``/``hR``. Both returned arrays have shape (3, ...) in the rotated
    frame (mass, normal momentum, tangential momentum).
    """
    hLs, qnLs, qtLs, hRs, qnRs, qtRs, _ = revise_face_states(
        hL, qnL, qtL, zL, hR, qnR, qtR, zR, h_dry)
    F = hll_flux(hLs, qnLs, qtLs, hRs, qnRs, qtRs, g, h_dry)
    hL_own = hL if hL_own is None else hL_own
    hR_own = hR if hR_own is None else hR_own
    FL = F.copy()
    FR = F.copy()
    FL[1] += 0.5 * g * (hL_own * hL_own - hLs * hLs)
    FR[1] += 0.5 * g * (hR_own * hR_own - hRs * hRs)
    return FL, FR


def parallel_face_fluxes(left, zL, right, zR, hL_own=None, hR_own=None, g=G, h_dry=H_DRY,
                         threads=1):
    """:func:`face_fluxes` on arrays of normal-frame states ``(3, ...)``.

    With ``threads > 1`` the faces are split into contiguous chunks evaluated
    concurrently; every face is computed by the same elementwise expression,
    so the result does not depend on the chunking.
    """
    left, right = np.asarray(left), np.asarray(right)
    shape = left.shape[1:]
    hL_own = left[0] if hL_own is None else hL_own
    hR_own = right[0] if hR_own is None else hR_own
    flat = [left.reshape(3, -1), np.ravel(zL), right.reshape(3, -1), np.ravel(zR),
            np.ravel(hL_own), np.ravel(hR_own)]
    n = flat[1].size

    def run(sl):
        l, zl, r, zr, ho_l, ho_r = (a[..., sl] for a in flat)
        return face_fluxes(l[0], l[1], l[2], zl, r[0], r[1], r[2], zr, ho_l, ho_r, g, h_dry)

    if threads <= 1 or n < 2 * threads:
        FL, FR = run(slice(None))
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]))
        FL = np.concatenate([p[0] for p in parts], axis=1)
        FR = np.concatenate([p[1] for p in parts], axis=1)
    return FL.reshape(3, *shape), FR.reshape(3, *shape)


# -- element operators ----------------------------------------------------------------

def face_limits(U):
    """Own face-centre limits ``(E, W, N, S)`` of coefficient arrays ``(..., 3, ...)``.

    ``U`` has the coefficient axis second (fields first) or first for a
    single field; the returned arrays drop that axis.
    """
    c0, c1x, c1y = U[:, 0], U[:, 1], U[:, 2]
    return c0 + SQRT3 * c1x, c0 - SQRT3 * c1x, c0 + SQRT3 * c1y, c0 - SQRT3 * c1y


def element_operator(U, z, FE, FW, GN, GS, dx, dy, g=G, h_dry=H_DRY, slopes=True):
    """Spatial operator ``L = [L0, L1x, L1y]`` of the DG2 scheme (FV1 when ``slopes=False``).

    ``FE, FW`` are x-fluxes and ``GN, GS`` y-fluxes, each of shape (3, ...)
    in the global (h, qx, qy) ordering, as seen by the element.
    """
    h0, h1x, h1y = U[0, 0], U[0, 1], U[0, 2]
    L = np.zeros_like(U)
    L[:, 0] = -(FE - FW) / dx - (GN - GS) / dy
    if not slopes:
        return L
    z1x, z1y = z[1], z[2]
    L[1, 0] -= g * h0 * 2 * SQRT3 * z1x / dx
    L[2, 0] -= g * h0 * 2 * SQRT3 * z1y / dy

    UE, UW, UN, US = face_limits(U)
    FE_in = flux_x(UE[0], UE[1], UE[2], g, h_dry)
    FW_in = flux_x(UW[0], UW[1], UW[2], g, h_dry)
    GN_in = flux_y(UN[0], UN[1], UN[2], g, h_dry)
    GS_in = flux_y(US[0], US[1], US[2], g, h_dry)
    L[:, 1] = -(SQRT3 / dx) * (FE + FW - FE_in - FW_in)
    L[:, 2] = -(SQRT3 / dy) * (GN + GS - GN_in - GS_in)
    # slope sources; the free-surface slope absorbs the face-centre quadrature
    # error of the pressure term, so a lake at rest gives exactly zero
    eta1x = h1x + z1x
    eta1y = h1y + z1y
    sx, sy = 2 * SQRT3 / dx, 2 * SQRT3 / dy
    L[1, 1] -= g * sx * h1x * eta1x
    L[2, 1] -= g * sy * h1x * eta1y
    L[1, 2] -= g * sx * h1y * eta1x
    L[2, 2] -= g * sy * h1y * eta1y
    return L


@lru_cache(maxsize=8)
def grid_pairs(ny, nx):
    """Flat index pairs of edge-adjacent elements on an ``ny x nx`` grid."""
    idx = np.arange(ny * nx).reshape(ny, nx)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return a, b


def neighbour_min(h0, pairs):
    """Smallest average depth among each element's edge neighbours (own if none)."""
    flat = h0.ravel()
    out = np.full_like(flat, np.inf)
    a, b = pairs
    np.minimum.at(out, a, flat[b])
    np.minimum.at(out, b, flat[a])
    return np.minimum(out, flat).reshape(h0.shape)


def front_mask(h0, pairs=None, h_front=H_FRONT):
    """Elements at a wet/dry front: own or any neighbour's average depth below ``h_front``."""
    front = h0 < h_front
    if pairs is not None:
        front = front | (neighbour_min(h0, pairs) < h_front)
    return front


def flatten_front(U, z, front):
    """Copies of ``U`` and ``z`` with all slope coefficients zeroed on ``front``."""
    U = U.copy()
    z = z.copy()
    U[:, 1:, front] = 0.0
    z[1:, front] = 0.0
    return U, z


def positivity_limit(U, h_dry=H_DRY, h_front=H_FRONT, pairs=None):
    """Clip negative averages and flatten thin or front elements.

    All flow slopes are zeroed on front elements (see :func:`front_mask`)
    and wherever a face-centre depth limit falls below ``h_front``, so every
    face limit stays non-negative. Returns a new array.
    """
    U = U.copy()
    h0 = U[0, 0]
    np.maximum(h0, 0.0, out=h0)
    dry = h0 <= h_dry
    if np.any(dry):
        U[1:, :, dry] = 0.0
        U[0, 1:, dry] = 0.0
    # thin face limits would carry unbounded face velocities
    thin = h0 - SQRT3 * np.maximum(np.abs(U[0, 1]), np.abs(U[0, 2])) < h_front
    flat = thin | front_mask(h0, pairs, h_front)
    if np.any(flat):
        U[:, 1:, flat] = 0.0
    return U


def apply_friction(U, manning, dt, g=G, h_dry=H_DRY):
    """Implicit Manning friction on the discharges.

    The factor is computed from the average velocities and divides the
    discharge averages and slopes alike, so slopes cannot outgrow the
    friction-damped averages.
    """
    n = np.asarray(manning, dtype=float)
    if not np.any(n > 0):
        return U
    U = U.copy()
    h = U[0, 0]
    wet = h > h_dry
    hs = np.where(wet, h, 1.0)
    u = np.where(wet, U[1, 0] / hs, 0.0)
    v = np.where(wet, U[2, 0] / hs, 0.0)
    speed = np.sqrt(u * u + v * v)
    denom = 1.0 + dt * g * n * n * speed / hs ** (4.0 / 3.0)
    U[1:] = np.where(wet, U[1:] / denom, U[1:])
    return U


def cfl_dt(h, qx, qy, size, courant, g=G, h_dry=H_DRY):
    """``courant * min(R / max(|u| + c, |v| + c))`` over wet elements; ``inf`` if all dry."""
    wet = h > h_dry
    if not np.any(wet):
        return np.inf
    hw = h[wet]
    c = np.sqrt(g * hw)
    speed = np.maximum(np.abs(qx[wet] / hw) + c, np.abs(qy[wet] / hw) + c)
    R = np.broadcast_to(size, h.shape)[wet]
    return float(courant * np.min(R / speed))


def acc_cfl_dt(h, size, courant=0.7, g=G, h_dry=H_DRY):
    """``courant * min(R) / sqrt(g * h_max)`` over the whole domain."""
    h_max = float(np.max(h))
    if h_max <= h_dry:
        return np.inf
    return float(courant * np.min(size) / np.sqrt(g * h_max))


def acc_face_discharge(eta_l, eta_r, z_l, z_r, q_prev, delta, manning, dt, g=G, h_dry=H_DRY):
    """Local-inertia discharge across a face with semi-implicit Manning friction."""
    if np.any(np.asarray(delta) <= 0):
        raise ValueError("face spacing must be positive")
    h_f = np.maximum(eta_l, eta_r) - np.maximum(z_l, z_r)
    wet = h_f > h_dry
    hf = np.where(wet, h_f, 1.0)
    num = q_prev - g * hf * dt * (eta_r - eta_l) / delta
    den = 1.0 + g * dt * np.asarray(manning) ** 2 * np.abs(q_prev) / hf ** (7.0 / 3.0)
    return np.where(wet, num / den, 0.0)


def limit_outflow(h, area, dt, out_volume):
    """Per-element factor in (0, 1] that keeps depths non-negative.

    ``out_volume`` is the volume an element would lose through its outflow
    faces during ``dt``; when that exceeds the stored volume every outflow
    face of the element is scaled down by the same factor.
    """
    vol = h * area
    return np.where(out_volume > vol, vol / np.where(out_volume > 0, out_volume, 1.0), 1.0)


# -- state on the uniform grid ---------------------------------------------------------

@dataclass
class SimState:
    """Flow on the uniform finest grid.

    ``U`` has shape (3, 3, ny, nx) and ``z`` (3, ny, nx). ACC runs keep the
    face discharges in ``qx_face`` (ny, nx+1) and ``qy_face`` (ny+1, nx) and
    mirror their cell means into ``U`` for output. ``outflow`` is the
    cumulative volume that has left through the domain edges.
    """

    U: np.ndarray
    z: np.ndarray
    dx: float
    manning: np.ndarray | float = 0.0
    t: float = 0.0
    dt: float = 0.0
    g: float = G
    h_dry: float = H_DRY
    boundaries: dict = field(default_factory=lambda: {e: "reflective" for e in EDGES})
    scheme: str = "dg2"
    qx_face: np.ndarray | None = None
    qy_face: np.ndarray | None = None
    threads: int = 1
    outflow: float = 0.0

    @property
    def shape(self):
        return self.U.shape[2:]

    def volume(self) -> float:
        return float(np.sum(self.U[0, 0]) * self.dx * self.dx)


def make_state(h, z, dx, scheme="dg2", qx=None, qy=None, **kw) -> SimState:
    """Build a :class:`SimState` from depth and topography coefficients.

    ``h`` and ``z`` may be (ny, nx) averages or (3, ny, nx) planar
    coefficients. FV1 and ACC keep only averages.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        z = np.stack([z, np.zeros_like(z), np.zeros_like(z)])
    h = np.asarray(h, dtype=float)
    if h.ndim == 2:
        h = np.stack([h, np.zeros_like(h), np.zeros_like(h)])
    U = np.zeros((3,) + h.shape)
    U[0] = h
    if qx is not None:
        U[1] = np.asarray(qx, dtype=float) if np.ndim(qx) == 3 else [qx, 0 * h[0], 0 * h[0]]
    if qy is not None:
        U[2] = np.asarray(qy, dtype=float) if np.ndim(qy) == 3 else [qy, 0 * h[0], 0 * h[0]]
    if scheme != "dg2":
        U[:, 1:] = 0.0
    state = SimState(U, z, float(dx), scheme=scheme, **kw)
    if scheme == "acc":
        ny, nx = state.shape
        state.qx_face = np.zeros((ny, nx + 1))
        state.qy_face = np.zeros((ny + 1, nx))
    return state


def _boundary_ghost(own, avg, z_own, z_avg, kind, normal):
    """Ghost state and bed beyond a boundary face.

    Reflective walls mirror the face state. Open edges take the element
    average, so the boundary flux damps the slope like an interior upwind face.
    """
    if kind == "open":
        return avg.copy(), z_avg.copy()
    ghost = own.copy()
    if kind == "reflective":
        ghost[normal] = -ghost[normal]
    return ghost, z_own.copy()


def structured_fluxes(U, z, boundaries, g=G, h_dry=H_DRY, threads=1):
    """Face fluxes ``FE, FW, GN, GS`` seen by every element of a structured grid."""
    UE, UW, UN, US = face_limits(U)
    zE, zW, zN, zS = face_limits(z[None])
    zE, zW, zN, zS = zE[0], zW[0], zN[0], zS[0]
    U0, z0 = U[:, 0], z[0]

    # x-normal faces, nx + 1 columns
    gw, zgw = _boundary_ghost(UW[:, :, :1], U0[:, :, :1], zW[:, :1], z0[:, :1],
                              boundaries["west"], 1)
    ge, zge = _boundary_ghost(UE[:, :, -1:], U0[:, :, -1:], zE[:, -1:], z0[:, -1:],
                              boundaries["east"], 1)
    left = np.concatenate([gw, UE], axis=2)
    right = np.concatenate([UW, ge], axis=2)
    zl = np.concatenate([zgw, zE], axis=1)
    zr = np.concatenate([zW, zge], axis=1)
    FL, FR = parallel_face_fluxes(left, zl, right, zr, g=g, h_dry=h_dry, threads=threads)
    FE, FW = FL[:, :, 1:], FR[:, :, :-1]

    # y-normal faces, ny + 1 rows; rotate (h, qx, qy) -> (h, qy, qx)
    gs, zgs = _boundary_ghost(US[:, :1, :], U0[:, :1, :], zS[:1, :], z0[:1, :],
                              boundaries["south"], 2)
    gn, zgn = _boundary_ghost(UN[:, -1:, :], U0[:, -1:, :], zN[-1:, :], z0[-1:, :],
                              boundaries["north"], 2)
    lower = np.concatenate([gs, UN], axis=1)[[0, 2, 1]]
    upper = np.concatenate([US, gn], axis=1)[[0, 2, 1]]
    zl = np.concatenate([zgs, zN], axis=0)
    zr = np.concatenate([zS, zgn], axis=0)
    GL, GR = parallel_face_fluxes(lower, zl, upper, zr, g=g, h_dry=h_dry, threads=threads)
    GN, GS = GL[[0, 2, 1], 1:, :], GR[[0, 2, 1], :-1, :]
    return FE, FW, GN, GS


def _check_finite(U, t):
    if not np.all(np.isfinite(U)):
        bad = np.argwhere(~np.isfinite(U))[0]
        raise NumericalBlowUp(t, tuple(int(k) for k in bad[2:]))


def structured_outflow_rate(FE, FW, GN, GS, dx) -> float:
    """Net volume per second leaving a structured grid through its edges."""
    return float((np.sum(FE[0, :, -1]) - np.sum(FW[0, :, 0])
                  + np.sum(GN[0, -1, :]) - np.sum(GS[0, 0, :])) * dx)


def _rhs(state: SimState, U, slopes):
    """Element operator and the boundary outflow rate it implies."""
    if slopes:
        front = front_mask(U[0, 0], grid_pairs(*state.shape))
        U, z = flatten_front(U, state.z, front)
    else:
        z = flat_topography(state.z)
    FE, FW, GN, GS = structured_fluxes(U, z, state.boundaries, state.g, state.h_dry,
                                       state.threads)
    L = element_operator(U, z, FE, FW, GN, GS, state.dx, state.dx,
                         state.g, state.h_dry, slopes=slopes)
    if slopes:
        L[:, 1:, front] = 0.0
    return L, structured_outflow_rate(FE, FW, GN, GS, state.dx)


def check_stage(U, t, strict=True):
    """Raise :class:`PositivityViolation` if a depth average is below ``-NEG_TOL``."""
    if strict and U.size:
        low = float(np.min(U[0, 0]))
        if low < -NEG_TOL:
            raise PositivityViolation(t, low)
    return U


def dg2_step(state: SimState, dt: float, strict=True) -> SimState:
    """Friction, then the two-stage Runge-Kutta update, positivity after each stage."""
    U = apply_friction(state.U, state.manning, dt, state.g, state.h_dry)
    pairs = grid_pairs(*state.shape)
    L0, r0 = _rhs(state, U, True)
    U1 = check_stage(U + dt * L0, state.t, strict)
    U1 = positivity_limit(U1, state.h_dry, pairs=pairs)
    L1, r1 = _rhs(state, U1, True)
    U2 = check_stage(0.5 * (U + U1 + dt * L1), state.t, strict)
    U2 = positivity_limit(U2, state.h_dry, pairs=pairs)
    _check_finite(U2, state.t + dt)
    return replace(state, U=U2, t=state.t + dt, dt=dt,
                   outflow=state.outflow + 0.5 * dt * (r0 + r1))


def fv1_step(state: SimState, dt: float, strict=True) -> SimState:
    """Friction, then one forward-Euler update of the averages."""
    U = apply_friction(state.U, state.manning, dt, state.g, state.h_dry)
    L0, r0 = _rhs(state, U, False)
    U1 = check_stage(U + dt * L0, state.t, strict)
    U1 = positivity_limit(U1, state.h_dry)
    _check_finite(U1, state.t + dt)
    return replace(state, U=U1, t=state.t + dt, dt=dt, outflow=state.outflow + dt * r0)


def flat_topography(z):
    """Keep only the averages of planar topography coefficients (FV1 and ACC)."""
    out = np.zeros_like(z)
    out[0] = z[0]
    return out


def open_boundary_bed(z, side):
    """Bed one element beyond an open boundary, continuing the element's planar slope.

    ``side`` is ``"west"``, ``"east"``, ``"south"`` or ``"north"``.
    """
    step = 2 * SQRT3
    if side == "west":
        return z[0] - step * z[1]
    if side == "east":
        return z[0] + step * z[1]
    if side == "south":
        return z[0] - step * z[2]
    return z[0] + step * z[2]


def acc_step(state: SimState, dt: float) -> SimState:
    """Update every face discharge, then the depths from the face exchanges."""
    g, hd, dx = state.g, state.h_dry, state.dx
    h = state.U[0, 0]
    z = state.z[0]
    eta = h + z
    n = np.broadcast_to(np.asarray(state.manning, dtype=float), h.shape)
    ny, nx = h.shape
    b = state.boundaries

    qx = np.zeros((ny, nx + 1))
    qx[:, 1:-1] = acc_face_discharge(eta[:, :-1], eta[:, 1:], z[:, :-1], z[:, 1:],
                                     state.qx_face[:, 1:-1], dx,
                                     0.5 * (n[:, :-1] + n[:, 1:]), dt, g, hd)
    qy = np.zeros((ny + 1, nx))
    qy[1:-1, :] = acc_face_discharge(eta[:-1, :], eta[1:, :], z[:-1, :], z[1:, :],
                                     state.qy_face[1:-1, :], dx,
                                     0.5 * (n[:-1, :] + n[1:, :]), dt, g, hd)
    for edge in EDGES:
        if b[edge] != "open":
            continue
        if edge in ("west", "east"):
            c = 0 if edge == "west" else -1
            zc = state.z[:, :, c]
            hb, zb, qp, nb = h[:, c], zc[0], state.qx_face[:, c], n[:, c]
        else:
            c = 0 if edge == "south" else -1
            zc = state.z[:, c, :]
            hb, zb, qp, nb = h[c, :], zc[0], state.qy_face[c, :], n[c, :]
        zg = open_boundary_bed(zc, edge)
        if edge in ("west", "south"):
            q = acc_face_discharge(hb + zg, hb + zb, zg, zb, qp, dx, nb, dt, g, hd)
        else:
            q = acc_face_discharge(hb + zb, hb + zg, zb, zg, qp, dx, nb, dt, g, hd)
        if edge == "west":
            qx[:, 0] = q
        elif edge == "east":
            qx[:, -1] = q
        elif edge == "south":
            qy[0, :] = q
        else:
            qy[-1, :] = q

    # keep depths non-negative by scaling each element's outflows
    out = (np.maximum(qx[:, 1:], 0) + np.maximum(-qx[:, :-1], 0)
           + np.maximum(qy[1:, :], 0) + np.maximum(-qy[:-1, :], 0)) * dx * dt
    r = limit_outflow(h, dx * dx, dt, out)
    rx = np.ones((ny, nx + 1))
    rx[:, 1:] = np.where(qx[:, 1:] > 0, r, rx[:, 1:])
    rx[:, :-1] = np.where(qx[:, :-1] < 0, r, rx[:, :-1])
    ry = np.ones((ny + 1, nx))
    ry[1:, :] = np.where(qy[1:, :] > 0, r, ry[1:, :])
    ry[:-1, :] = np.where(qy[:-1, :] < 0, r, ry[:-1, :])
    qx = qx * rx
    qy = qy * ry

    h_new = h + dt * ((qx[:, :-1] - qx[:, 1:]) + (qy[:-1, :] - qy[1:, :])) / dx
    h_new = np.maximum(h_new, 0.0)
    U = np.zeros_like(state.U)
    U[0, 0] = h_new
    U[1, 0] = 0.5 * (qx[:, :-1] + qx[:, 1:])
    U[2, 0] = 0.5 * (qy[:-1, :] + qy[1:, :])
    _check_finite(U, state.t + dt)
    out = dt * dx * (np.sum(qx[:, -1]) - np.sum(qx[:, 0]) + np.sum(qy[-1, :]) - np.sum(qy[0, :]))
    return replace(state, U=U, t=state.t + dt, dt=dt, qx_face=qx, qy_face=qy,
                   outflow=state.outflow + float(out))


def compute_dt(state: SimState, courant: float) -> float:
    """CFL-limited time step on the uniform grid; ``inf`` when everything is dry."""
    h, qx, qy = state.U[0, 0], state.U[1, 0], state.U[2, 0]
    if state.scheme == "acc":
        return acc_cfl_dt(h, state.dx, courant, state.g, state.h_dry)
    return cfl_dt(h, qx, qy, state.dx, courant, state.g, state.h_dry)


def step(state: SimState, dt: float, strict=True) -> SimState:
    """One step of the state's scheme; ``strict`` enables :class:`PositivityViolation`."""
    if state.scheme == "acc":
        return acc_step(state, dt)
    return {"dg2": dg2_step, "fv1": fv1_step}[state.scheme](state, dt, strict)


def source_limited_dt(dt, t, inflows, peak_depth_per_volume, h_region, size, courant, g=G):
    """Halve ``dt`` until the depth an inflow adds in one step respects the CFL bound.

    ``peak_depth_per_volume[k]`` is the largest depth increment per m^3 of
    inflow ``k`` and ``h_region[k]`` the deepest water currently in its
    region. Needed when the domain starts dry, where the flow CFL bound is
    infinite.
    """
    for _ in range(60):
        ok = True
        for inf, wmax, h0 in zip(inflows, peak_depth_per_volume, h_region):
            dh = wmax * hydrograph_volume(inf.hydrograph, t, t + dt)
            if dt * np.sqrt(g * (h0 + dh)) > courant * size:
                ok = False
                break
        if ok:
            return dt
        dt *= 0.5
    return dt


def clip_dt(dt: float, t: float, next_output: float, end_time: float) -> float:
    """Shorten ``dt`` so the step lands exactly on the next output or the end time."""
    target = min(next_output, end_time)
    if not np.isfinite(dt) or t + dt >= target:
        return target - t
    return dt


# -- inflow sources -------------------------------------------------------------------

def inflow_weights(inflow, fine_shape, active=None):
    """Depth increment per unit inflow volume on the fine grid for one inflow box.

    Cells on nodata (inactive) elements are excluded; raises ``ConfigError``
    when none remain.
    """
    ny, nx = fine_shape
    if not (0 <= inflow.i0 <= inflow.i1 < nx and 0 <= inflow.j0 <= inflow.j1 < ny):
        raise ConfigError([f"inflow region {inflow.i0} {inflow.j0} {inflow.i1} {inflow.j1} "
                           f"outside the {nx}x{ny} grid"])
    mask = np.zeros(fine_shape, dtype=bool)
    mask[inflow.j0:inflow.j1 + 1, inflow.i0:inflow.i1 + 1] = True
    if active is not None:
        mask &= active
    if not mask.any():
        raise ConfigError([f"inflow region {inflow.source or ''} lies entirely on nodata cells"])
    return mask / mask.sum()


def apply_sources_and_boundaries(state: SimState, inflows, dt: float, weights=None) -> SimState:
    """Add inflow volume for the step ``[t, t + dt]`` to the depth averages.

    ``inflows`` is a list of :class:`~mwflood.raster_io.Inflow`; each adds
    ``V / area`` over its region where ``V`` is the exact hydrograph volume
    in the step. Boundary conditions are imposed through ghost states inside
    the flux evaluation and need no separate pass.
    """
    if not inflows:
        return state
    if weights is None:
        weights = [inflow_weights(inf, state.shape) for inf in inflows]
    U = state.U.copy()
    area = state.dx * state.dx
    for inf, w in zip(inflows, weights):
        vol = hydrograph_volume(inf.hydrograph, state.t, state.t + dt)
        U[0, 0] += w * (vol / area)
    return replace(state, U=U)
