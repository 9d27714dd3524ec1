"""Shared fixtures: verdict printing, model helpers and cached valley runs."""
from __future__ import annotations

import os

import numpy as np
import pytest

from mwflood import scenarios as sc
from mwflood.solver_nonuniform import run_simulation


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line past pytest's capture, then assert on it."""

    def _verdict(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _verdict


def model_arrays(model):
    """Flow (3, 3, n) and topography (3, n) coefficients of any model, leaf-ordered."""
    if hasattr(model, "state"):
        return model.state.U.reshape(3, 3, -1), model.state.z.reshape(3, -1)
    return model.sim.U, model.sim.z


def model_area(model):
    """Per-element areas matching :func:`model_arrays`."""
    if hasattr(model, "state"):
        return np.full(int(np.prod(model.state.shape)), model.state.dx ** 2)
    return model.sim.size ** 2


class ValleyRuns:
    """Runs of the desk-scale valley, computed once per session and keyed by settings."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def get(self, solver, grid_mode="uniform", epsilon=1e-3, threads=1, **scenario_kw):
        key = (solver, grid_mode, epsilon, threads, tuple(sorted(scenario_kw.items())))
        if key not in self.cache:
            name = "_".join(str(k) for k in key[:4])
            if scenario_kw:
                name += "_" + "_".join(f"{k}{v}" for k, v in sorted(scenario_kw.items()))
            out = os.path.join(self.root, name)
            scen = sc.make_valley(**scenario_kw)
            cfg = sc.materialize(scen, out, solver=solver, grid_mode=grid_mode,
                                 epsilon=epsilon, threads=threads)
            result = run_simulation(cfg)
            self.cache[key] = (result, cfg.output_dir)
        return self.cache[key]


@pytest.fixture(scope="session")
def valley_runs(tmp_path_factory):
    return ValleyRuns(str(tmp_path_factory.mktemp("valley")))
