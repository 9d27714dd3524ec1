"""Synthetic scenarios: a desk-scale flood valley, a 1D dam-break and a lake at rest.

Each generator is a pure function of its arguments and returns a
:class:`SyntheticScenario` that can be written to disk with :func:`emit`
and run through the normal config pipeline.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .raster_io import (EDGES, Hydrograph, Inflow, Raster, ScenarioConfig, write_ascii_grid,
                        write_config, write_hydrograph)

G = 9.80665


@dataclass
class SyntheticScenario:
    """DEM, initial depth, forcing and gauges for one synthetic case.

    ``dem`` is vertex-registered. ``initial_depth`` (optional) holds element
    averages on the element grid; ``config`` carries every run setting except
    file paths, which :func:`emit` fills in.
    """

    name: str
    dem: Raster
    config: ScenarioConfig
    initial_depth: Raster | None = None
    extras: dict = field(default_factory=dict)

    def with_solver(self, solver, **changes) -> "SyntheticScenario":
        return replace(self, config=replace(self.config, solver=solver, **changes))


def _config(**kw) -> ScenarioConfig:
    return ScenarioConfig(dem_path="dem.asc", **kw)


# -- valley ---------------------------------------------------------------------------------

def valley_elevation(x, y, length, width, slope=0.002, channel_half_width=None,
                     channel_depth=2.0, depressions=3, depression_depth=1.0):
    """Valley floor: parabolic channel, planar banks, sinusoidal depressions on the thalweg."""
    b = channel_half_width if channel_half_width is not None else width / 5
    y0 = width / 2
    r = np.abs(y - y0)
    base = 10.0 + slope * (length - x)
    # banks continue the parabola's edge slope as planes
    cross = np.where(r < b, channel_depth * (r / b) ** 2,
                     channel_depth + 2 * channel_depth / b * (r - b))
    z = base + cross
    span = length / (depressions + 1)
    half = span / 4
    for k in range(1, depressions + 1):
        xc = k * span
        inside = (np.abs(x - xc) < half) & (r < b)
        bump = np.sin(np.pi * (x - xc + half) / (2 * half)) ** 2 * np.cos(np.pi * r / (2 * b)) ** 2
        z = z - np.where(inside, depression_depth * bump, 0.0)
    return z


def triangular_hydrograph(peak, t_peak, t_end, t_total):
    return Hydrograph(np.array([0.0, t_peak, t_end, max(t_total, t_end)]),
                      np.array([0.0, peak, 0.0, 0.0]))


def make_valley(length_cells=128, width_cells=32, L=5, cellsize=20.0, peak_discharge=60.0,
                end_time=7200.0, output_interval=600.0, solver="dg2") -> SyntheticScenario:
    """Downsloping parabolic valley with three depressions and an upstream inflow.

    The element grid is ``length_cells x width_cells``; both must be
    multiples of ``2**L``.
    """
    length, width = length_cells * cellsize, width_cells * cellsize
    xv = np.arange(length_cells + 1) * cellsize
    yv = np.arange(width_cells + 1) * cellsize
    X, Y = np.meshgrid(xv, yv)
    z = valley_elevation(X, Y, length, width)
    dem = Raster.from_south_up(z, 0.0, 0.0, cellsize)

    b = width / 5
    j_lo = int(np.floor((width / 2 - b / 2) / cellsize))
    j_hi = int(np.ceil((width / 2 + b / 2) / cellsize)) - 1
    hydro = triangular_hydrograph(peak_discharge, end_time / 6, end_time / 3, end_time)
    inflow = Inflow(hydro, 0, j_lo, 1, j_hi, source="inflow.csv")
    span = length / 4
    gauges = [(k * span, width / 2) for k in (1, 2, 3)]
    bnd = {e: "reflective" for e in EDGES}
    bnd["east"] = "open"
    cfg = _config(solver=solver, end_time=end_time, max_level=L, epsilon=1e-3,
                  output_interval=output_interval, manning=0.04, boundaries=bnd,
                  inflows=[inflow], gauges=gauges, output_dir="output")
    return SyntheticScenario("valley", dem, cfg, extras={"hydrograph": hydro})


# -- dam-break ---------------------------------------------------------------------------------

def stoker_solution(x, t, h_left=1.0, h_right=0.5, x0=0.0, g=G):
    """Exact depth and velocity of the wet-bed dam-break (rarefaction + shock).

    The star depth solves the Riemann-invariant / shock-jump compatibility
    condition by bracketing root finding.
    """
    x = np.asarray(x, dtype=float)
    if h_left == h_right:
        return np.full_like(x, h_left), np.zeros_like(x)
    if t <= 0:
        return np.where(x < x0, h_left, h_right), np.zeros_like(x)
    mirrored = h_right > h_left
    if mirrored:
        h, u = stoker_solution(2 * x0 - x, t, h_right, h_left, x0, g)
        return h, -u
    cl, cr = np.sqrt(g * h_left), np.sqrt(g * h_right)

    def mismatch(hs):
        rarefaction_u = 2 * (cl - np.sqrt(g * hs))
        shock_u = (hs - h_right) * np.sqrt(0.5 * g * (hs + h_right) / (hs * h_right))
        return rarefaction_u - shock_u

    hs = brentq(mismatch, h_right, h_left, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    cs = np.sqrt(g * hs)
    us = 2 * (cl - cs)
    shock = hs * us / (hs - h_right)
    xi = (x - x0) / t
    fan = (xi > -cl) & (xi < us - cs)
    h = np.where(xi <= -cl, h_left,
                 np.where(fan, (2 * cl - xi) ** 2 / (9 * g), np.where(xi < shock, hs, h_right)))
    u = np.where(xi <= -cl, 0.0,
                 np.where(fan, 2 * (cl + xi) / 3, np.where(xi < shock, us, 0.0)))
    return h, u


def make_dambreak_1d(cells=400, length=100.0, h_left=1.0, h_right=0.5, end_time=10.0,
                     rows=1, L=0, closed=False, solver="dg2") -> SyntheticScenario:
    """Flat frictionless channel with a dam in the middle.

    ``rows`` element rows (reflective sides). The ends are open unless
    ``closed`` is set.
    """
    if cells < 2:
        raise ValueError("need at least two cells")
    dx = length / cells
    dem = Raster.from_south_up(np.zeros((rows + 1, cells + 1)), 0.0, 0.0, dx)
    xc = (np.arange(cells) + 0.5) * dx
    depth = np.tile(np.where(xc < length / 2, h_left, h_right), (rows, 1))
    bnd = {e: "reflective" for e in EDGES}
    if not closed:
        bnd["east"] = bnd["west"] = "open"
    cfg = _config(solver=solver, end_time=end_time, max_level=L, output_interval=end_time,
                  manning=0.0, boundaries=bnd, gauges=[(length / 2, rows * dx / 2)],
                  output_dir="output")
    scen = SyntheticScenario("dambreak", dem, cfg,
                             Raster.from_south_up(depth, 0.0, 0.0, dx),
                             extras={"x0": length / 2, "h_left": h_left, "h_right": h_right})
    return scen


# -- lake at rest ---------------------------------------------------------------------------

def make_lake_at_rest(size=32, seed=0, L=2, cellsize=1.0, island=False, surface_gap=0.1,
                      end_time=1.0, solver="dg2") -> SyntheticScenario:
    """Random smooth-plus-rough bed under a flat free surface, reflective walls.

    With ``island`` a smooth mound pokes through the surface.
    """
    rng = np.random.default_rng(seed)
    n = size + 1
    x = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(x, x)
    smooth = sum(rng.uniform(0.05, 0.3) * np.sin(np.pi * (kx * X + rng.uniform()))
                 * np.sin(np.pi * (ky * Y + rng.uniform()))
                 for kx, ky in rng.integers(1, 4, size=(4, 2)))
    z = smooth + 0.05 * rng.random((n, n))
    if island:
        z = z + 1.5 * np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.01)
        eta = float(np.quantile(z, 0.6))
    else:
        eta = float(z.max()) + surface_gap
    dem = Raster.from_south_up(z, 0.0, 0.0, cellsize)
    cfg = _config(solver=solver, end_time=end_time, max_level=L, initial_surface=eta,
                  output_interval=end_time, manning=0.0, output_dir="output")
    return SyntheticScenario("lake", dem, cfg, extras={"eta": eta})


SCENARIOS = {"valley": make_valley, "dambreak": make_dambreak_1d, "lake": make_lake_at_rest}


def emit(scenario: SyntheticScenario, out_dir, solver=None) -> str:
    """Write DEM, forcing and config files; returns the config path."""
    os.makedirs(out_dir, exist_ok=True)
    write_ascii_grid(scenario.dem, os.path.join(out_dir, "dem.asc"))
    cfg = replace(scenario.config, dem_path="dem.asc")
    if solver is not None:
        cfg = replace(cfg, solver=solver)
    if scenario.initial_depth is not None:
        write_ascii_grid(scenario.initial_depth, os.path.join(out_dir, "initial_depth.asc"))
        cfg = replace(cfg, initial_depth_path="initial_depth.asc")
    names = []
    for k, inf in enumerate(cfg.inflows):
        name = inf.source or f"inflow_{k}.csv"
        write_hydrograph(inf.hydrograph, os.path.join(out_dir, name))
        names.append(name)
    path = os.path.join(out_dir, "scenario.cfg")
    write_config(cfg, path, names)
    return path


def materialize(scenario: SyntheticScenario, out_dir, **changes) -> ScenarioConfig:
    """Emit ``scenario`` and load its config back with absolute paths."""
    from .raster_io import read_config
    cfg = read_config(emit(scenario, out_dir))
    cfg = replace(cfg, output_dir=os.path.join(out_dir, "output"), **changes)
    cfg.validate()
    return cfg
