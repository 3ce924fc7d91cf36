import copy
import json
import os
from pathlib import Path

import numpy as np
import pytest

from taililc.config import ExperimentConfig
from taililc.plant import ControllerConfig, PlantConfig, build_loops
from taililc.setpoint import MotionProfileParams, generate_fourth_order

FLEX_MODE = (150.0, 0.03, 0.05)

TINY = {
    "name": "tiny",
    "plant": {"m": 5.0, "Ts": 0.001, "modes": [{"freq_hz": 150.0, "damping": 0.03, "gain": 0.05}]},
    "controller": {},
    "filters": {"lambda_reg": None, "q_cutoff_hz": 100.0, "learning_gain": 1.0, "tol": 1e-8, "max_trials": 100},
    "trajectories": {
        "grid": {
            "displacement": [0.02, 0.03, 0.04],
            "v_max": [0.1, 0.15],
            "a_max": [3.0],
            "j_max": [300.0],
            "s_max": [30000.0],
        },
        "pad": 20,
        "split": {"method": "every_nth", "n": 3},
    },
    "tail": {"n_l": 3, "hidden": [8], "standardize": "global",
             "train": {"learning_rate": 0.001, "epochs": 20, "batch_size": 128, "seed": 0}},
    "nnilc": {"hidden": [4], "standardize": "feature",
              "train": {"learning_rate": 0.001, "epochs": 2, "batch_size": 128, "seed": 0}},
    "eval": {"timing_repeats": 1, "n_random": 2, "seed": 0},
}


def tiny_raw(**overrides):
    raw = copy.deepcopy(TINY)
    for k, v in overrides.items():
        raw[k] = v
    return raw


@pytest.fixture
def tiny_cfg():
    return ExperimentConfig(tiny_raw())


@pytest.fixture
def tiny_config_file(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(scope="session")
def short_traj():
    return generate_fourth_order(MotionProfileParams(0.02, 0.1, 3.0, 300.0, 3e4), 1e-3)


@pytest.fixture(scope="session")
def flex_loops(short_traj):
    N = short_traj.n_samples + 40
    return build_loops(PlantConfig(5.0, (FLEX_MODE,), 1e-3), ControllerConfig(), N)


@pytest.fixture(scope="session")
def rigid_loops(short_traj):
    N = short_traj.n_samples + 40
    return build_loops(PlantConfig(5.0, (), 1e-3), ControllerConfig(), N)


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Two independent desk repros through the CLI, with exit codes, stdout and wall time."""
    import contextlib
    import io as _io
    import time

    from taililc import cli

    roots, codes, outs, secs = [], [], [], []
    for tag in ("a", "b"):
        root = tmp_path_factory.mktemp(f"desk_{tag}")
        buf = _io.StringIO()
        t0 = time.perf_counter()
        with contextlib.redirect_stdout(buf):
            code = cli.main(["--config", "desk", "--out", str(root), "repro"])
        secs.append(time.perf_counter() - t0)
        roots.append(Path(root))
        codes.append(code)
        outs.append(buf.getvalue())
    return {"root": roots[0], "exit": codes[0], "stdout": outs[0], "seconds": secs[0],
            "root_b": roots[1], "exit_b": codes[1], "stdout_b": outs[1]}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    os.environ.pop("TAILILC_OUTPUT_ROOT", None)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
