"""Command-line entry point: ``mwflood grid|run|compare|scenario``.

Exit codes: 0 success, 2 configuration or usage error, 3 input/output
error, 4 numerical blow-up during a run.
"""
from __future__ import annotations

import argparse
import os
import platform
import sys
from dataclasses import replace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BLOWUP = 4


def format_epsilon(eps: float) -> str:
    """Compact scientific form, e.g. ``1e-3`` or ``2.5e-4``."""
    if eps == 0:
        return "0"
    mantissa, exponent = f"{eps:.6e}".split("e")
    mantissa = mantissa.rstrip("0").rstrip(".")
    return f"{mantissa}e{int(exponent)}"


def _version_text() -> str:
    import numpy
    import scipy

    from . import __version__
    return (f"mwflood {__version__} (python {platform.python_version()}, "
            f"numpy {numpy.__version__}, scipy {scipy.__version__})")


def _histogram_lines(grid):
    from .quadgrid import level_histogram
    counts, pct = level_histogram(grid)
    return [f"level {lvl}: {pct[lvl]:.4g}%" for lvl in range(grid.L + 1) if counts[lvl]]


# -- subcommands ------------------------------------------------------------------------------

def cmd_grid_generate(args) -> int:
    from .mra import generate_static_grid
    from .quadgrid import stats_report, write_nug
    from .raster_io import read_ascii_grid

    dem = read_ascii_grid(args.dem)
    grid = generate_static_grid(dem, args.epsilon, args.max_level, args.graded, args.wavelet,
                                args.registration)
    write_nug(grid, args.out)
    print(f"epsilon: {format_epsilon(args.epsilon)}")
    print(f"wavelet: {args.wavelet}  graded: {'yes' if args.graded else 'no'}")
    print(stats_report(grid))
    print("\n".join(_histogram_lines(grid)))
    return EXIT_OK


def cmd_grid_stats(args) -> int:
    from .quadgrid import read_nug, stats_report
    grid = read_nug(args.grid)
    print(stats_report(grid))
    print("\n".join(_histogram_lines(grid)))
    return EXIT_OK


def cmd_run(args) -> int:
    from .raster_io import read_config
    from .solver_nonuniform import run_simulation
    from .solver_uniform import NumericalBlowUp

    cfg = read_config(args.config)
    changes = {}
    if args.solver is not None:
        changes["solver"] = args.solver
    if args.grid is not None:
        if args.grid in ("uniform", "nonuniform"):
            changes.update(grid_mode=args.grid, grid_path=None)
        else:
            if not os.path.isfile(args.grid):
                raise FileNotFoundError(f"grid file not found: {args.grid}")
            changes.update(grid_mode="nonuniform", grid_path=os.path.abspath(args.grid))
    if args.out is not None:
        changes["output_dir"] = os.path.abspath(args.out)
    if args.threads is not None:
        changes["threads"] = args.threads
    cfg = replace(cfg, **changes)
    cfg.validate()
    try:
        result = run_simulation(cfg, cfg.output_dir)
    except NumericalBlowUp as exc:
        print(f"error: {exc}; see {os.path.join(cfg.output_dir, 'stats.txt')}", file=sys.stderr)
        return EXIT_BLOWUP
    print(f"solver: {cfg.solver}  grid: {cfg.grid_path or cfg.grid_mode}")
    print(f"status: {result.status}  steps: {result.steps}  wall time: {result.wall_time:.3f} s")
    print(f"relative mass error: {result.mass_error:.3e}")
    print(f"outputs: {result.out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .metrics import compare_runs
    report = compare_runs(args.test, args.ref, args.wet_threshold, args.out or args.test)
    print(report.text())
    return EXIT_OK


def cmd_scenario_emit(args) -> int:
    from .scenarios import SCENARIOS, emit
    scenario = SCENARIOS[args.name]()
    path = emit(scenario, args.out, args.solver)
    print(path)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .raster_io import SOLVERS
    from .scenarios import SCENARIOS

    p = argparse.ArgumentParser(prog="mwflood", description=(
        "Flood modelling on uniform, multiwavelet-generated non-uniform and adaptive grids."))
    p.add_argument("--version", action="store_true", help="print version information and exit")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for face-flux loops (results do not depend on it)")
    sub = p.add_subparsers(dest="command")

    grid = sub.add_parser("grid", help="generate or inspect non-uniform grids")
    gsub = grid.add_subparsers(dest="grid_command")
    gen = gsub.add_parser("generate", help="build a static grid from a DEM")
    gen.add_argument("--dem", required=True)
    gen.add_argument("--epsilon", type=float, default=1e-3,
                     help="detail threshold (default 1e-3)")
    gen.add_argument("--max-level", type=int, required=True, dest="max_level")
    gen.add_argument("--wavelet", choices=("mw", "hw"), default="mw")
    gen.add_argument("--graded", action="store_true", help="enforce 2:1 face balance")
    gen.add_argument("--registration", choices=("vertex", "cell"), default="vertex")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_grid_generate)
    st = gsub.add_parser("stats", help="print the level histogram of a grid file")
    st.add_argument("grid")
    st.set_defaults(func=cmd_grid_stats)

    run = sub.add_parser("run", help="run a simulation from a scenario config")
    run.add_argument("--config", required=True)
    run.add_argument("--solver", choices=SOLVERS)
    run.add_argument("--grid", help="'uniform', 'nonuniform' or a .nug grid file")
    run.add_argument("--out")
    run.add_argument("--threads", type=int, default=None, dest="run_threads")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare a run directory against a reference")
    cmp_.add_argument("--test", required=True)
    cmp_.add_argument("--ref", required=True)
    cmp_.add_argument("--wet-threshold", type=float, default=0.01, dest="wet_threshold")
    cmp_.add_argument("--out", help="where report.csv/report.txt go (default: the test dir)")
    cmp_.set_defaults(func=cmd_compare)

    scen = sub.add_parser("scenario", help="write built-in synthetic scenarios")
    ssub = scen.add_subparsers(dest="scenario_command")
    emit = ssub.add_parser("emit", help="write DEM, forcing and config files")
    emit.add_argument("--name", choices=sorted(SCENARIOS), required=True)
    emit.add_argument("--out", required=True)
    emit.add_argument("--solver", choices=SOLVERS)
    emit.set_defaults(func=cmd_scenario_emit)
    return p


def main(argv=None) -> int:
    from .metrics import MetricError
    from .quadgrid import GridError
    from .raster_io import ConfigError, RasterFormatError

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(_version_text())
        return EXIT_OK
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return EXIT_CONFIG
    threads = getattr(args, "run_threads", None) or args.threads
    if threads is not None and threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    args.threads = threads
    try:
        return args.func(args)
    except (ConfigError, GridError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RasterFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
