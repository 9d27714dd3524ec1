"""The ``mwflood`` command line."""
from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from mwflood import scenarios as sc
from mwflood.cli import format_epsilon, main
from mwflood.quadgrid import read_nug
from mwflood.raster_io import Raster, write_ascii_grid


@pytest.fixture
def flat_dem(tmp_path):
    p = tmp_path / "flat.asc"
    write_ascii_grid(Raster.from_south_up(np.full((17, 17), 2.0)), p)
    return str(p)


@pytest.fixture
def rough_dem(tmp_path):
    p = tmp_path / "rough.asc"
    write_ascii_grid(Raster.from_south_up(np.random.default_rng(0).random((17, 17))), p)
    return str(p)


@pytest.fixture
def dambreak_cfg(tmp_path):
    scen = sc.make_dambreak_1d(cells=16, length=16.0, rows=4, L=2, end_time=0.5)
    return sc.emit(scen, str(tmp_path / "scen"))


def test_format_epsilon():
    assert [format_epsilon(e) for e in (1e-3, 2.5e-4, 0.0, 1.0)] == ["1e-3", "2.5e-4", "0", "1e0"]


def test_version(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("mwflood ") and "numpy" in out and "scipy" in out


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    assert "subcommand" in capsys.readouterr().err


def test_bad_threads(capsys, flat_dem, tmp_path):
    assert main(["--threads", "0", "grid", "generate", "--dem", flat_dem, "--max-level", "1",
                 "--out", str(tmp_path / "g.nug")]) == 2


def test_flat_dem_is_all_level_zero(capsys, flat_dem, tmp_path):
    out = tmp_path / "g.nug"
    assert main(["grid", "generate", "--dem", flat_dem, "--max-level", "4", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "epsilon: 1e-3" in text and "level 0: 100%" in text
    assert read_nug(out).n_leaves == 1


def test_zero_epsilon_refines_everything(capsys, rough_dem, tmp_path):
    out = tmp_path / "g.nug"
    assert main(["grid", "generate", "--dem", rough_dem, "--max-level", "4", "--epsilon", "0",
                 "--graded", "--out", str(out)]) == 0
    assert "level 4: 100%" in capsys.readouterr().out
    assert read_nug(out).n_leaves == 256
    assert main(["grid", "stats", str(out)]) == 0
    assert "level 4: 100%" in capsys.readouterr().out


def test_missing_dem_is_io_error(capsys, tmp_path):
    assert main(["grid", "generate", "--dem", str(tmp_path / "nope.asc"), "--max-level", "1",
                 "--out", str(tmp_path / "g.nug")]) == 3


def test_malformed_dem_is_io_error(capsys, tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 2\nnrows x\n")
    assert main(["grid", "generate", "--dem", str(p), "--max-level", "1",
                 "--out", str(tmp_path / "g.nug")]) == 3


def test_run_and_self_compare(capsys, dambreak_cfg, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", dambreak_cfg, "--grid", "nonuniform", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "status: completed" in text
    assert os.path.isfile(out / "stats.txt")
    assert main(["compare", "--test", str(out), "--ref", str(out)]) == 0
    assert "RMSE per gauge" in capsys.readouterr().out
    assert os.path.isfile(out / "report.csv")


def test_run_on_grid_file(capsys, dambreak_cfg, tmp_path):
    gdir = tmp_path / "g"
    assert main(["run", "--config", dambreak_cfg, "--grid", "nonuniform", "--out", str(gdir)]) == 0
    out = tmp_path / "run"
    assert main(["run", "--config", dambreak_cfg, "--grid", str(gdir / "grid.nug"),
                 "--out", str(out), "--solver", "fv1"]) == 0
    assert "solver: fv1" in capsys.readouterr().out


def test_mismatched_grid_file_is_config_error(capsys, dambreak_cfg, rough_dem, tmp_path):
    g = tmp_path / "other.nug"
    assert main(["grid", "generate", "--dem", rough_dem, "--max-level", "4", "--out", str(g)]) == 0
    assert main(["run", "--config", dambreak_cfg, "--grid", str(g),
                 "--out", str(tmp_path / "run")]) == 2
    assert "does not match" in capsys.readouterr().err


def test_missing_grid_file_is_io_error(capsys, dambreak_cfg, tmp_path):
    assert main(["run", "--config", dambreak_cfg, "--grid", str(tmp_path / "none.nug")]) == 3


def test_adaptive_without_max_level_is_config_error(capsys, tmp_path, flat_dem):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"dem_path = {flat_dem}\nsolver = mwdg2\nend_time = 1\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "max_level" in capsys.readouterr().err


def test_blow_up_exit_code(capsys, monkeypatch, dambreak_cfg, tmp_path):
    from mwflood import solver_nonuniform
    from mwflood.solver_uniform import NumericalBlowUp

    def explode(cfg, out_dir=None):
        raise NumericalBlowUp(0.25, 3)

    monkeypatch.setattr(solver_nonuniform, "run_simulation", explode)
    assert main(["run", "--config", dambreak_cfg, "--out", str(tmp_path / "run")]) == 4
    assert "stats.txt" in capsys.readouterr().err


def test_compare_without_outputs_is_config_error(capsys, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    assert main(["compare", "--test", str(tmp_path / "a"), "--ref", str(tmp_path / "b")]) == 2


def test_scenario_emit(capsys, tmp_path):
    assert main(["scenario", "emit", "--name", "valley", "--out", str(tmp_path / "v")]) == 0
    path = capsys.readouterr().out.strip()
    assert os.path.isfile(path)
    for f in ("dem.asc", "inflow.csv", "scenario.cfg"):
        assert os.path.isfile(tmp_path / "v" / f)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mwflood.cli", "--version"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("mwflood")
