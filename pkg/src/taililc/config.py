"""Experiment configuration: one JSON document drives the whole pipeline."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .io import sha256_json
from .mlp import TrainConfig
from .plant import ControllerConfig, PlantConfig
from .setpoint import every_nth, evenly_spaced, grid_tuples, required_length

OUTPUT_ROOT_ENV = "TAILILC_OUTPUT_ROOT"
SOURCES = ("zero", "mass_ff", "expert", "tail", "nnilc", "tail+mass_ff", "nnilc+mass_ff")
TOP_KEYS = {"name", "plant", "controller", "filters", "trajectories", "tail", "nnilc", "eval", "output_dir"}


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing key {key!r}")
    return d[key]


def _train_cfg(d, where):
    d = dict(_require(d, "train", where))
    if "seed" not in d:
        raise ConfigError(f"{where}.train: seed must be given explicitly")
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.train: {exc}") from exc


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    raw: dict
    path: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    # -- sections -----------------------------------------------------------
    @property
    def name(self):
        return self.raw.get("name", "experiment")

    @property
    def plant(self) -> PlantConfig:
        return PlantConfig.from_dict(self.raw["plant"])

    @property
    def controller(self) -> ControllerConfig:
        return ControllerConfig.from_dict(self.raw.get("controller", {}))

    @property
    def Ts(self):
        return float(self.raw["plant"]["Ts"])

    @property
    def filters(self):
        f = self.raw.get("filters", {})
        return {
            "lambda_reg": f.get("lambda_reg"),
            "q_cutoff_hz": f.get("q_cutoff_hz"),
            "learning_gain": float(f.get("learning_gain", 1.0)),
            "tol": float(f.get("tol", 1e-8)),
            "max_trials": int(f.get("max_trials", 100)),
        }

    @property
    def trajectories(self):
        return self.raw["trajectories"]

    @property
    def grid(self):
        return self.trajectories["grid"]

    @property
    def pad(self):
        return int(self.trajectories.get("pad", 0))

    def length(self):
        """Common sample count: explicit ``length``, or longest member plus ``pad``."""
        if self.trajectories.get("length") is not None:
            return int(self.trajectories["length"])
        return required_length(self.grid, self.Ts) + self.pad

    def test_selector(self, n_total):
        sp = self.trajectories["split"]
        if sp["method"] == "every_nth":
            return every_nth(int(sp["n"]), sp.get("offset"))
        return evenly_spaced(n_total, int(sp["n_test"]))

    @property
    def tail_train(self) -> TrainConfig:
        return _train_cfg(self.raw["tail"], "tail")

    @property
    def nnilc_train(self) -> TrainConfig:
        return _train_cfg(self.raw["nnilc"], "nnilc")

    @property
    def eval(self):
        e = dict(self.raw.get("eval", {}))
        e.setdefault("sources", list(SOURCES))
        e.setdefault("timing_repeats", 5)
        e.setdefault("n_random", 10)
        return e

    def output_dir(self):
        """Output directory; the env var, when set, replaces the root."""
        out = Path(self.raw.get("output_dir", f"runs/{self.name}"))
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            return Path(root) / out.name
        if not out.is_absolute() and self.path is not None:
            return (self.path.parent / out).resolve()
        return out

    # -- hashing ------------------------------------------------------------
    def section(self, *keys):
        return {k: copy.deepcopy(self.raw.get(k)) for k in keys}

    def fingerprint(self):
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return sha256_json(body)

    # -- validation ---------------------------------------------------------
    def validate(self):
        raw = self.raw
        unknown = set(raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        for k in ("plant", "trajectories", "tail", "nnilc"):
            _require(raw, k, "config")
        _require(raw["plant"], "Ts", "plant")
        try:
            self.plant
            self.controller
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"plant/controller: {exc}") from exc
        f = self.filters
        if f["lambda_reg"] is not None and float(f["lambda_reg"]) < 0:
            raise ConfigError("filters.lambda_reg must be nonnegative")
        if f["q_cutoff_hz"] is not None and not 0 < float(f["q_cutoff_hz"]) < 0.5 / self.Ts:
            raise ConfigError("filters.q_cutoff_hz must lie in (0, Nyquist)")
        grid = _require(self.trajectories, "grid", "trajectories")
        n_total = len(grid_tuples(grid))
        sp = _require(self.trajectories, "split", "trajectories")
        if sp.get("method") not in ("every_nth", "evenly_spaced"):
            raise ConfigError("trajectories.split.method must be every_nth or evenly_spaced")
        if sp["method"] == "every_nth" and int(sp.get("n", 0)) < 2:
            raise ConfigError("trajectories.split.n must be >= 2")
        self.test_selector(n_total)
        if self.trajectories.get("length") is not None and self.length() < required_length(grid, self.Ts):
            raise ConfigError("trajectories.length is shorter than the longest grid member")
        t = raw["tail"]
        nl = _require(t, "n_l", "tail")
        if nl == "auto":
            _require(t, "budget", "tail")
            if not t.get("candidates"):
                raise ConfigError("tail: n_l='auto' needs a candidates list")
        elif not (isinstance(nl, int) and nl >= 1):
            raise ConfigError("tail.n_l must be a positive integer or 'auto'")
        for sec in ("tail", "nnilc"):
            if raw[sec].get("standardize", True) not in (True, False, "feature", "global"):
                raise ConfigError(f"{sec}.standardize must be feature, global or false")
            hid = _require(raw[sec], "hidden", sec)
            if not hid or any(int(h) < 1 for h in hid):
                raise ConfigError(f"{sec}.hidden must list positive widths")
        self.tail_train
        self.nnilc_train
        feats = raw["nnilc"].get("features", ["r", "v", "a", "j"])
        bad = [x for x in feats if x not in ("r", "v", "a", "j", "s")]
        if bad:
            raise ConfigError(f"nnilc.features: unknown {bad}")
        bad = [s for s in self.eval["sources"] if s not in SOURCES]
        if bad:
            raise ConfigError(f"eval.sources: unknown {bad}")
        if "seed" not in self.eval:
            raise ConfigError("eval.seed must be given explicitly")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig(raw, path)


def builtin_config(name):
    """Bundled configs: 'desk' or 'full_scale'."""
    ref = resources.files("taililc") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return ExperimentConfig(json.loads(ref.read_text()), None)


def resolve_config(name_or_path) -> ExperimentConfig:
    """A path to a JSON file, or the name of a bundled config."""
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return load_config(p)
    return builtin_config(name_or_path)


__all__ = ["ExperimentConfig", "load_config", "builtin_config", "resolve_config", "SOURCES"]
