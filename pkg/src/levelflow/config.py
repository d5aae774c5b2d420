"""Experiment configuration: a single versioned JSON document, strictly
validated (unknown keys are errors; reproducibility of research artifacts
demands strictness)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCHEMA = "levelflow-config/1"

_GRID_KEYS = {"dim", "origin", "n", "dx"}
_LEVEL_KEYS = {"count", "lo", "hi", "margin"}
_TIME_KEYS = {"horizon", "snapshots", "points"}
_ANALYSIS_KEYS = {"fattening", "asymptotics", "window", "reg_initial_b"}
_WINDOW_KEYS = {"type", "lo", "hi", "box"}
_TOP_KEYS = {"schema", "grid", "initial", "density", "velocity", "levels",
             "time", "solver", "analysis", "threshold_tol", "output"}

_INITIAL_PARAMS = {
    "paper1d": set(),
    "radial": {"v0"},
    "cone": {"c"},
    "quasiconvex-random": {"seed", "dim"},
    "table": {"path"},
}
_DENSITY_PARAMS = {
    "lebesgue": set(),
    "cauchy2d": set(),
    "gaussian": {"sigma"},
    "table": {"path"},
}
_VELOCITY_PARAMS = {
    "affine_clamped": {"a", "b", "qlo", "qhi"},
    "shifted": {"c"},
    "table": {"path"},
}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _named_section(section, registry: dict, where: str) -> dict:
    if not isinstance(section, dict) or "name" not in section:
        raise ConfigError(f"{where} must be an object with a 'name'")
    name = section["name"]
    if name not in registry:
        raise ConfigError(f"unknown {where} name {name!r}; "
                          f"choose from {sorted(registry)}")
    _check_keys({k: v for k, v in section.items() if k != "name"},
                registry[name], f"{where}.{name}")
    return dict(section)


@dataclass
class ExperimentConfig:
    grid: dict | None
    initial: dict
    density: dict
    velocity: dict
    levels: dict
    time: dict
    solver: str = "representation"
    analysis: dict = field(default_factory=dict)
    threshold_tol: float = 1e-3
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(raw, _TOP_KEYS, "config")
        if raw.get("schema") != SCHEMA:
            raise ConfigError(f"config schema must be {SCHEMA!r}")
        for key in ("initial", "density", "velocity", "levels", "time"):
            if key not in raw:
                raise ConfigError(f"config is missing the {key!r} section")

        grid = raw.get("grid")
        if grid is not None:
            _check_keys(grid, _GRID_KEYS, "grid")
            if not {"dim", "origin", "n", "dx"} <= set(grid):
                raise ConfigError("grid needs dim, origin, n, dx")

        initial = _named_section(raw["initial"], _INITIAL_PARAMS, "initial")
        density = _named_section(raw["density"], _DENSITY_PARAMS, "density")
        velocity = _named_section(raw["velocity"], _VELOCITY_PARAMS, "velocity")

        levels = dict(raw["levels"])
        _check_keys(levels, _LEVEL_KEYS, "levels")
        count = levels.get("count")
        if not isinstance(count, int) or count < 16:
            raise ConfigError("levels.count must be an integer >= 16")

        time = dict(raw["time"])
        _check_keys(time, _TIME_KEYS, "time")
        if "horizon" not in time or time["horizon"] < 0:
            raise ConfigError("time.horizon must be >= 0")
        snaps = time.get("snapshots", [])
        if any(t < 0 or t > time["horizon"] for t in snaps):
            raise ConfigError("snapshot times must lie in [0, horizon]")

        solver = raw.get("solver", "representation")
        if solver not in ("representation", "fd", "both"):
            raise ConfigError("solver must be representation | fd | both")

        analysis = dict(raw.get("analysis", {}))
        _check_keys(analysis, _ANALYSIS_KEYS, "analysis")
        window = analysis.get("window")
        if window is not None:
            _check_keys(window, _WINDOW_KEYS, "analysis.window")
            if window.get("type") not in ("annulus", "box"):
                raise ConfigError("analysis.window.type must be annulus | box")

        tol = raw.get("threshold_tol", 1e-3)
        if not tol > 0:
            raise ConfigError("threshold_tol must be positive")

        output = dict(raw.get("output", {}))
        _check_keys(output, {"dir"}, "output")

        return cls(grid=grid, initial=initial, density=density,
                   velocity=velocity, levels=levels, time=time, solver=solver,
                   analysis=analysis, threshold_tol=float(tol), output=output)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def echo(self) -> dict:
        """Round-trippable plain-dict form for the manifest."""
        return {
            "schema": SCHEMA,
            "grid": self.grid,
            "initial": self.initial,
            "density": self.density,
            "velocity": self.velocity,
            "levels": self.levels,
            "time": self.time,
            "solver": self.solver,
            "analysis": self.analysis,
            "threshold_tol": self.threshold_tol,
            "output": self.output,
        }
