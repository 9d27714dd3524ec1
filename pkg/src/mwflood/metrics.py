"""Comparison of a test run against a reference run.

Gauge time series are compared by root-mean-square error and depth
rasters by flood-extent scores: hit rate ``H``, false-alarm ratio ``F``
and critical success index ``C``.
"""
from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass

import numpy as np

from .raster_io import Raster, read_ascii_grid

DEFAULT_WET_THRESHOLD = 0.01
GAUGE_VARIABLES = ("h", "eta", "speed")

_GAUGE_RE = re.compile(r"^gauge_(\d+)\.csv$")
_DEPTH_RE = re.compile(r"^depth_(\d+)\.asc$")


class MetricError(ValueError):
    """Inputs cannot be compared (empty overlap, mismatched geometry, no data)."""


@dataclass
class GaugeSeries:
    """Samples of one variable at one gauge; ``t`` strictly increasing."""

    gauge_id: str
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.t.shape != self.values.shape or self.t.ndim != 1:
            raise MetricError(f"gauge {self.gauge_id}: times and values differ in shape")
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise MetricError(f"gauge {self.gauge_id}: times are not strictly increasing")


@dataclass
class ExtentMetrics:
    H: float
    F: float
    C: float
    hits: int
    misses: int
    false_alarms: int


def rmse(p: GaugeSeries, ref: GaugeSeries) -> float:
    """Root-mean-square difference of ``p`` against ``ref`` on ``ref``'s stamps.

    When the stamps differ, ``p`` is linearly interpolated onto those
    reference stamps that fall inside its own time range.
    """
    if p.t.size == 0 or ref.t.size == 0:
        raise MetricError(f"gauge {ref.gauge_id}: empty series")
    if p.t.shape == ref.t.shape and np.array_equal(p.t, ref.t):
        diff = p.values - ref.values
    else:
        inside = (ref.t >= p.t[0]) & (ref.t <= p.t[-1])
        if not np.any(inside):
            raise MetricError(f"gauge {ref.gauge_id}: no time overlap with the reference")
        diff = np.interp(ref.t[inside], p.t, p.values) - ref.values[inside]
    return float(np.sqrt(np.mean(diff * diff)))


def extent_metrics(test: Raster, ref: Raster, wet_threshold=DEFAULT_WET_THRESHOLD) -> ExtentMetrics:
    """Hit rate, false-alarm ratio and critical success index of ``test`` against ``ref``.

    A cell is inundated when its depth is at least ``wet_threshold``; cells
    that are nodata in either raster are ignored. Ratios with an empty
    denominator take their best value (nothing was missed or over-predicted).
    """
    if not test.same_geometry(ref):
        raise MetricError(f"raster geometry differs: test {test.values.shape} "
                          f"(cellsize {test.cellsize}) vs reference {ref.values.shape} "
                          f"(cellsize {ref.cellsize})")
    valid = ~(test.nodata_mask | ref.nodata_mask)
    wet_t = (test.values >= wet_threshold) & valid
    wet_r = (ref.values >= wet_threshold) & valid
    hits = int(np.count_nonzero(wet_t & wet_r))
    misses = int(np.count_nonzero(wet_r & ~wet_t))
    false_alarms = int(np.count_nonzero(wet_t & ~wet_r))
    H = hits / (hits + misses) if hits + misses else 1.0
    F = false_alarms / (hits + false_alarms) if hits + false_alarms else 0.0
    total = hits + misses + false_alarms
    C = hits / total if total else 1.0
    return ExtentMetrics(H, F, C, hits, misses, false_alarms)


# -- run directories --------------------------------------------------------------------------

def read_gauge_csv(path) -> dict:
    """Columns of a ``gauge_<k>.csv`` file (``t,h,eta,u,v``) as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MetricError(f"{path}: empty gauge file")
    header = [c.strip() for c in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise MetricError(f"{path}: {exc}") from None
    data = data.reshape(-1, len(header))
    return {name: data[:, k] for k, name in enumerate(header)}


def gauge_series(columns: dict, gauge_id: str, variable: str) -> GaugeSeries:
    """One variable from gauge columns; ``speed`` is the velocity magnitude."""
    t = columns["t"]
    if variable == "speed":
        values = np.hypot(columns["u"], columns["v"])
    else:
        values = columns[variable]
    # repeated stamps (an output landing) keep their last sample
    keep = np.append(np.diff(t) > 0, True) if t.size else np.zeros(0, dtype=bool)
    return GaugeSeries(gauge_id, t[keep], values[keep])


def _listing(directory, pattern):
    if not os.path.isdir(directory):
        return {}
    return {m.group(0): int(m.group(1))
            for m in (pattern.match(n) for n in sorted(os.listdir(directory))) if m}


@dataclass
class Report:
    rmse: list          # (gauge id, variable, value or None when absent)
    extent: list        # (raster id, ExtentMetrics or None when absent)
    missing: list       # file names present on one side only

    def rows(self):
        for gid, var, val in self.rmse:
            yield ["rmse", f"{gid}.{var}", "absent" if val is None else repr(val)]
        for rid, em in self.extent:
            if em is None:
                yield ["extent", rid, "absent"]
            else:
                yield ["extent", rid, repr(em.H), repr(em.F), repr(em.C),
                       str(em.hits), str(em.misses), str(em.false_alarms)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "id", "values"])
            w.writerows(self.rows())

    def text(self) -> str:
        lines = ["RMSE per gauge", f"{'gauge':<10}" + "".join(f"{v:>14}" for v in GAUGE_VARIABLES)]
        by_gauge = {}
        for gid, var, val in self.rmse:
            by_gauge.setdefault(gid, {})[var] = val
        for gid, vals in by_gauge.items():
            cells = [("absent" if vals.get(v) is None else f"{vals[v]:.6g}") for v in GAUGE_VARIABLES]
            lines.append(f"{gid:<10}" + "".join(f"{c:>14}" for c in cells))
        lines += ["", "Flood extent per output",
                  f"{'raster':<12}{'H':>8}{'F':>8}{'C':>8}{'hits':>8}{'misses':>8}{'false':>8}"]
        for rid, em in self.extent:
            if em is None:
                lines.append(f"{rid:<12}{'absent':>8}")
            else:
                lines.append(f"{rid:<12}{em.H:8.3f}{em.F:8.3f}{em.C:8.3f}"
                             f"{em.hits:8d}{em.misses:8d}{em.false_alarms:8d}")
        if self.missing:
            lines += ["", "Missing counterparts: " + ", ".join(self.missing)]
        return "\n".join(lines)


def compare_runs(test_dir, ref_dir, wet_threshold=DEFAULT_WET_THRESHOLD, out_dir=None) -> Report:
    """Compare gauge series and depth rasters of two run directories.

    Files present on only one side are listed and marked absent. Writes
    ``report.csv`` and ``report.txt`` into ``out_dir`` when given.
    """
    gauges_t, gauges_r = _listing(test_dir, _GAUGE_RE), _listing(ref_dir, _GAUGE_RE)
    depth_t, depth_r = _listing(test_dir, _DEPTH_RE), _listing(ref_dir, _DEPTH_RE)
    if not (gauges_t or depth_t) or not (gauges_r or depth_r):
        raise MetricError(f"nothing to compare between {test_dir!r} and {ref_dir!r}")
    missing = sorted((set(gauges_t) ^ set(gauges_r)) | (set(depth_t) ^ set(depth_r)))

    rmse_rows = []
    for name in sorted(set(gauges_t) | set(gauges_r), key=lambda n: (len(n), n)):
        gid = name[:-4]
        if name not in gauges_t or name not in gauges_r:
            rmse_rows += [(gid, var, None) for var in GAUGE_VARIABLES]
            continue
        ct = read_gauge_csv(os.path.join(test_dir, name))
        cr = read_gauge_csv(os.path.join(ref_dir, name))
        for var in GAUGE_VARIABLES:
            rmse_rows.append((gid, var, rmse(gauge_series(ct, gid, var), gauge_series(cr, gid, var))))

    extent_rows = []
    for name in sorted(set(depth_t) | set(depth_r)):
        rid = name[:-4]
        if name not in depth_t or name not in depth_r:
            extent_rows.append((rid, None))
            continue
        extent_rows.append((rid, extent_metrics(read_ascii_grid(os.path.join(test_dir, name)),
                                                read_ascii_grid(os.path.join(ref_dir, name)),
                                                wet_threshold)))

    report = Report(rmse_rows, extent_rows, missing)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.write_csv(os.path.join(out_dir, "report.csv"))
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(report.text() + "\n")
    return report


__all__ = ["MetricError", "GaugeSeries", "ExtentMetrics", "rmse", "extent_metrics",
           "read_gauge_csv", "gauge_series", "Report", "compare_runs", "DEFAULT_WET_THRESHOLD",
           "GAUGE_VARIABLES"]
