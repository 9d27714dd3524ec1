"""Raster, hydrograph and scenario-configuration I/O.

Every piece of external data enters the engine through this module:

* ESRI ASCII grids (``.asc``) for DEMs, depth maps and discharge maps,
* hydrograph CSV files with a ``t,Q`` header,
* plain-text ``key = value`` scenario configuration files.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")

SOLVERS = ("dg2", "fv1", "acc", "mwdg2", "hwfv1")
ADAPTIVE_SOLVERS = ("mwdg2", "hwfv1")
DEFAULT_COURANT = {"dg2": 0.33, "mwdg2": 0.33, "fv1": 0.5, "hwfv1": 0.5, "acc": 0.7}
EDGES = ("north", "east", "south", "west")


class RasterFormatError(ValueError):
    """Malformed ASCII grid."""


class ConfigError(ValueError):
    """Invalid scenario configuration; ``errors`` lists every violation."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class Raster:
    """A north-up raster. ``values`` has shape (nrows, ncols), top row first."""

    values: np.ndarray
    xll: float = 0.0
    yll: float = 0.0
    cellsize: float = 1.0
    nodata: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise RasterFormatError(f"raster values must be a non-empty 2D grid, got {self.values.shape}")
        if not self.cellsize > 0:
            raise RasterFormatError(f"cellsize must be positive, got {self.cellsize}")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.values == self.nodata

    def south_up(self) -> np.ndarray:
        """Values with row 0 at the southern edge (the solver's orientation)."""
        return self.values[::-1]

    @classmethod
    def from_south_up(cls, grid, xll=0.0, yll=0.0, cellsize=1.0, nodata=-9999.0) -> "Raster":
        return cls(np.asarray(grid, dtype=float)[::-1], xll, yll, cellsize, nodata)

    def same_geometry(self, other: "Raster") -> bool:
        return (self.values.shape == other.values.shape
                and math.isclose(self.cellsize, other.cellsize)
                and math.isclose(self.xll, other.xll, abs_tol=1e-9)
                and math.isclose(self.yll, other.yll, abs_tol=1e-9))


def read_ascii_grid(path) -> Raster:
    """Parse an ESRI ASCII grid. Header keywords are case-insensitive."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()

    header = {}
    pos = 0
    for key in HEADER_KEYS:
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise RasterFormatError(f"{path}: header ends before '{key}'")
        parts = lines[pos].split()
        name = parts[0].lower() if parts else ""
        # accept the centre-registered spellings as synonyms of the corner ones
        name = {"xllcenter": "xllcorner", "yllcenter": "yllcorner"}.get(name, name)
        if name != key or len(parts) != 2:
            raise RasterFormatError(
                f"{path}: line {pos + 1}: expected '{key} <value>', got {lines[pos]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise RasterFormatError(
                f"{path}: line {pos + 1}: non-numeric value for '{key}': {parts[1]!r}") from None
        pos += 1

    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1 or ncols != header["ncols"] or nrows != header["nrows"]:
        raise RasterFormatError(f"{path}: ncols/nrows must be positive integers")
    try:
        body = np.array(" ".join(lines[pos:]).split(), dtype=float)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-numeric grid value ({exc})") from None
    if body.size != ncols * nrows:
        raise RasterFormatError(
            f"{path}: expected {ncols * nrows} values ({nrows} rows x {ncols} cols), found {body.size}")
    return Raster(body.reshape(nrows, ncols), header["xllcorner"], header["yllcorner"],
                  header["cellsize"], header["nodata_value"])


def write_ascii_grid(raster: Raster, path) -> None:
    """Write ``raster`` with 17 significant digits, so reading it back is lossless."""
    path = Path(path)
    fmt = "%.17g"
    with open(path, "w") as fh:
        fh.write(f"ncols {raster.ncols}\n")
        fh.write(f"nrows {raster.nrows}\n")
        fh.write(f"xllcorner {fmt % raster.xll}\n")
        fh.write(f"yllcorner {fmt % raster.yll}\n")
        fh.write(f"cellsize {fmt % raster.cellsize}\n")
        fh.write(f"NODATA_value {fmt % raster.nodata}\n")
        np.savetxt(fh, raster.values, fmt=fmt, delimiter=" ")


@dataclass
class Hydrograph:
    times: np.ndarray
    discharges: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.discharges = np.asarray(self.discharges, dtype=float)
        if self.times.shape != self.discharges.shape or self.times.ndim != 1:
            raise ConfigError("hydrograph times and discharges must be equal-length 1D sequences")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ConfigError("hydrograph times must be strictly increasing")
        if np.any(self.discharges < 0):
            raise ConfigError("hydrograph discharges must be non-negative")

    @classmethod
    def from_samples(cls, samples) -> "Hydrograph":
        samples = list(samples)
        if not samples:
            return cls(np.empty(0), np.empty(0))
        t, q = zip(*samples)
        return cls(np.array(t), np.array(q))


def hydrograph_at(hydrograph: Hydrograph, t: float) -> float:
    """Linearly interpolated discharge, clamped to the end samples."""
    if hydrograph.times.size == 0:
        raise ConfigError("empty hydrograph")
    return float(np.interp(t, hydrograph.times, hydrograph.discharges))


def hydrograph_volume(hydrograph: Hydrograph, t0: float, t1: float) -> float:
    """Exact integral of the interpolated (and clamped) discharge over [t0, t1]."""
    if hydrograph.times.size == 0:
        raise ConfigError("empty hydrograph")
    if t1 <= t0:
        return 0.0
    ts, qs = hydrograph.times, hydrograph.discharges
    inner = ts[(ts > t0) & (ts < t1)]
    knots = np.concatenate(([t0], inner, [t1]))
    vals = np.interp(knots, ts, qs)
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)))


def read_hydrograph(path) -> Hydrograph:
    """Read a two-column CSV (time in s, discharge in m3/s) with one header row."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty hydrograph file")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise ConfigError(f"{path}: line {lineno}: expected 't,Q' numbers, got {row!r}") from None
    return Hydrograph.from_samples(rows)


def write_hydrograph(hydrograph: Hydrograph, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,Q\n")
        for t, q in zip(hydrograph.times, hydrograph.discharges):
            fh.write(f"{float(t)!r},{float(q)!r}\n")


@dataclass
class Inflow:
    hydrograph: Hydrograph
    # inclusive fine-cell index box; i counts columns from the west, j rows from the south
    i0: int
    j0: int
    i1: int
    j1: int
    source: str = ""


@dataclass
class ScenarioConfig:
    dem_path: str
    solver: str = "dg2"
    end_time: float = 0.0
    epsilon: float = 1e-3
    max_level: int | None = None
    grid_mode: str = "uniform"
    grid_path: str | None = None
    dem_registration: str = "vertex"
    output_interval: float | None = None
    manning: float = 0.0
    manning_path: str | None = None
    g: float = 9.80665
    h_dry: float = 1e-6
    wet_threshold: float = 0.01
    courant: float | None = None
    boundaries: dict = field(default_factory=lambda: {e: "reflective" for e in EDGES})
    inflows: list = field(default_factory=list)
    gauges: list = field(default_factory=list)
    output_dir: str = "output"
    initial_depth: float = 0.0
    initial_surface: float | None = None
    initial_depth_path: str | None = None
    adapt_every: int = 1
    threads: int = 1

    @property
    def courant_number(self) -> float:
        return self.courant if self.courant is not None else DEFAULT_COURANT[self.solver]

    @property
    def is_adaptive(self) -> bool:
        return self.solver in ADAPTIVE_SOLVERS

    def validate(self) -> None:
        errs = []
        if not self.dem_path:
            errs.append("missing dem_path")
        if self.solver not in SOLVERS:
            errs.append(f"unknown solver '{self.solver}' (choose from {', '.join(SOLVERS)})")
        if not self.epsilon >= 0:
            errs.append(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_level is not None and self.max_level < 0:
            errs.append(f"max_level must be >= 0, got {self.max_level}")
        if self.solver in ADAPTIVE_SOLVERS and self.max_level is None:
            errs.append(f"solver {self.solver} requires max_level")
        if self.grid_mode not in ("uniform", "nonuniform"):
            errs.append(f"grid_mode must be 'uniform' or 'nonuniform', got '{self.grid_mode}'")
        if self.grid_mode == "nonuniform" and self.max_level is None and self.grid_path is None:
            errs.append("grid_mode=nonuniform requires max_level (or a grid file)")
        if not self.end_time >= 0:
            errs.append(f"end_time must be >= 0, got {self.end_time}")
        if self.output_interval is not None and not self.output_interval > 0:
            errs.append(f"output_interval must be > 0, got {self.output_interval}")
        if self.dem_registration not in ("vertex", "cell"):
            errs.append(f"dem_registration must be 'vertex' or 'cell', got '{self.dem_registration}'")
        if self.manning < 0:
            errs.append("manning must be >= 0")
        if not self.g > 0:
            errs.append("g must be > 0")
        if not self.h_dry > 0:
            errs.append("h_dry must be > 0")
        if self.courant is not None and not 0 < self.courant <= 1:
            errs.append("courant must be in (0, 1]")
        for edge, kind in self.boundaries.items():
            if kind not in ("reflective", "open"):
                errs.append(f"boundary_{edge} must be 'reflective' or 'open', got '{kind}'")
        if self.adapt_every < 1:
            errs.append("adapt_every must be >= 1")
        if self.threads < 1:
            errs.append("threads must be >= 1")
        for inflow in self.inflows:
            if inflow.i1 < inflow.i0 or inflow.j1 < inflow.j0 or min(inflow.i0, inflow.j0) < 0:
                errs.append(f"inflow region {inflow.i0} {inflow.j0} {inflow.i1} {inflow.j1} is empty or negative")
        if errs:
            raise ConfigError(errs)


_FLOAT_KEYS = {"epsilon", "end_time", "output_interval", "g", "h_dry", "wet_threshold",
               "courant", "initial_depth", "initial_surface"}
_INT_KEYS = {"max_level", "adapt_every", "threads"}
_PATH_KEYS = {"dem_path", "output_dir", "initial_depth_path"}
_STR_KEYS = {"solver", "grid_mode", "dem_registration"}
_KNOWN = (_FLOAT_KEYS | _INT_KEYS | _PATH_KEYS | _STR_KEYS
          | {"manning", "grid", "boundaries", "inflow", "gauge"}
          | {f"boundary_{e}" for e in EDGES})


def read_config(path) -> ScenarioConfig:
    """Parse a ``key = value`` scenario file.

    Relative paths are resolved against the directory holding the config file.
    Repeated ``inflow`` and ``gauge`` keys accumulate. All problems are collected
    and raised together as one :class:`ConfigError`.
    """
    path = Path(path)
    base = path.parent
    errs = []
    values = {}
    inflows, gauges = [], []
    boundaries = {e: "reflective" for e in EDGES}

    def resolve(p):
        return str(p if os.path.isabs(p) else (base / p))

    with open(path) as fh:
        lines = fh.read().splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errs.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in _KNOWN:
            errs.append(f"line {lineno}: unknown key '{key}'")
            continue
        try:
            if key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _PATH_KEYS:
                values[key] = resolve(val) if key != "output_dir" else resolve(val)
            elif key in _STR_KEYS:
                values[key] = val.lower()
            elif key == "manning":
                try:
                    values["manning"] = float(val)
                except ValueError:
                    values["manning_path"] = resolve(val)
            elif key == "grid":
                values["grid_path"] = None if val.lower() == "uniform" else resolve(val)
            elif key == "boundaries":
                for e in EDGES:
                    boundaries[e] = val.lower()
            elif key.startswith("boundary_"):
                boundaries[key[len("boundary_"):]] = val.lower()
            elif key == "gauge":
                x, y = (float(v) for v in val.replace(",", " ").split())
                gauges.append((x, y))
            elif key == "inflow":
                hpath, _, box = val.partition("@")
                idx = [int(v) for v in box.split()]
                if len(idx) != 4:
                    raise ValueError("inflow needs 'file.csv @ i0 j0 i1 j1'")
                try:
                    hydro = read_hydrograph(resolve(hpath.strip()))
                except ConfigError as exc:
                    errs.extend(exc.errors)
                    continue
                except OSError as exc:
                    errs.append(f"line {lineno}: cannot read hydrograph: {exc}")
                    continue
                inflows.append(Inflow(hydro, *idx, source=hpath.strip()))
        except ValueError as exc:
            errs.append(f"line {lineno}: bad value for '{key}': {val!r} ({exc})")

    if "dem_path" not in values:
        errs.append("missing dem_path")
    if "end_time" not in values:
        errs.append("missing end_time")
    if errs:
        raise ConfigError(errs)

    cfg = ScenarioConfig(boundaries=boundaries, inflows=inflows, gauges=gauges, **values)
    cfg.validate()
    return cfg


def write_config(cfg: ScenarioConfig, path, hydrograph_names=None) -> None:
    """Serialise ``cfg`` back to the ``key = value`` format.

    Inflow hydrographs are referenced by ``hydrograph_names`` (one per inflow),
    which the caller is expected to have written next to the config.
    """
    out = [f"dem_path = {cfg.dem_path}", f"solver = {cfg.solver}",
           f"end_time = {cfg.end_time!r}", f"epsilon = {cfg.epsilon!r}",
           f"grid_mode = {cfg.grid_mode}", f"dem_registration = {cfg.dem_registration}",
           f"g = {cfg.g!r}", f"h_dry = {cfg.h_dry!r}", f"wet_threshold = {cfg.wet_threshold!r}",
           f"output_dir = {cfg.output_dir}", f"initial_depth = {cfg.initial_depth!r}"]
    if cfg.max_level is not None:
        out.append(f"max_level = {cfg.max_level}")
    if cfg.output_interval is not None:
        out.append(f"output_interval = {cfg.output_interval!r}")
    out.append(f"manning = {cfg.manning_path or repr(cfg.manning)}")
    if cfg.courant is not None:
        out.append(f"courant = {cfg.courant!r}")
    if cfg.initial_surface is not None:
        out.append(f"initial_surface = {cfg.initial_surface!r}")
    if cfg.initial_depth_path:
        out.append(f"initial_depth_path = {cfg.initial_depth_path}")
    for e in EDGES:
        out.append(f"boundary_{e} = {cfg.boundaries[e]}")
    names = hydrograph_names or [inf.source for inf in cfg.inflows]
    for inf, name in zip(cfg.inflows, names):
        out.append(f"inflow = {name} @ {inf.i0} {inf.j0} {inf.i1} {inf.j1}")
    for x, y in cfg.gauges:
        out.append(f"gauge = {float(x)!r} {float(y)!r}")
    Path(path).write_text("\n".join(out) + "\n")
