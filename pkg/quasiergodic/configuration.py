"""Experiment configuration: JSON sections of flat key/value pairs, parsed strictly."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from pathlib import Path
from typing import Any

import numpy as np

from quasiergodic import storage_paths
from quasiergodic.errors import ConfigError
from quasiergodic.flow_core import FlowSystem, IntegratorConfig, settle
from quasiergodic.geometry import DEFAULT_GRID_DIVISIONS
from quasiergodic.invariants import ObservableWithGradient
from quasiergodic.observables import build_observable
from quasiergodic.systems import build_system

log = logging.getLogger(__name__)

OUTPUT_ENV_VAR = "QUASIERGODIC_OUTPUT_DIR"
SAMPLERS = ("uniform",)

DEFAULTS: dict[str, Any] = {
    "system": {"name": None, "params": {}},
    "integrator": {"method": "RK45", "atol": 1e-10, "rtol": 1e-9, "max_step": None},
    "seeds": {"points": None, "sampler": None, "count": 10, "rng_seed": None, "burn_in": 0.0},
    "grid": {"h": None},
    "horizons": {"schedule": [100.0, 200.0, 400.0], "sample_step": None},
    "tolerances": {"equivalence_cells": 2.0, "average_tol": 1e-2, "residual_tol": 1e-8, "cycle_tol": 1e-8},
    "observables": [],
    "output": {"directory": None},
    "sensitivity": {
        "eps_grid": [1e-2, 1e-4, 1e-6, 1e-8],
        "probes": 8,
        "tail_window": [20.0, 60.0],
        "t_step": None,
        "max_hops": 1,
        "saturation": 0.005,
    },
    "regularity": {"eps_grid": [0.3, 0.1], "delta_grid": [0.3], "t_grid": [1.0], "pair_budget": 32, "horizon": 50.0},
}


def _merge_section(name: str, given: Any) -> Any:
    default = DEFAULTS[name]
    if isinstance(default, list):
        if not isinstance(given, list):
            raise ConfigError(f"section '{name}' must be a list")
        return copy.deepcopy(given)
    if not isinstance(given, dict):
        raise ConfigError(f"section '{name}' must be an object")
    unknown = sorted(set(given) - set(default))
    if unknown:
        raise ConfigError(f"section '{name}' has unknown keys {unknown}; allowed: {sorted(default)}")
    merged = copy.deepcopy(default)
    merged.update(copy.deepcopy(given))
    return merged


def _number(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _integer(key: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _numbers(key: str, values: Any) -> list[float]:
    if not isinstance(values, list):
        raise ConfigError(f"{key} must be a list of numbers, got {values!r}")
    return [_number(key, v) for v in values]


class ExperimentConfig:
    """Resolved experiment settings; build with ``from_dict`` or ``from_file``."""

    def __init__(self, sections: dict[str, Any]):
        self.sections = sections
        self._validate()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration sections {unknown}; allowed: {sorted(DEFAULTS)}")
        sections = {name: _merge_section(name, data.get(name, copy.deepcopy(DEFAULTS[name]))) for name in DEFAULTS}
        return cls(sections)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return load_config(path)

    def _validate(self) -> None:
        s = self.sections
        if not s["system"]["name"]:
            raise ConfigError("system.name is required")
        if not isinstance(s["system"]["params"], dict):
            raise ConfigError("system.params must be an object")
        seeds = s["seeds"]
        if seeds["points"] is None and seeds["sampler"] is None:
            raise ConfigError("seeds need either explicit points or a sampler")
        if seeds["sampler"] is not None:
            if seeds["sampler"] not in SAMPLERS:
                raise ConfigError(f"unknown seed sampler '{seeds['sampler']}'; choose from {list(SAMPLERS)}")
            if seeds["rng_seed"] is None:
                raise ConfigError("seeds.rng_seed is required when a sampler is used")
            if int(seeds["count"]) < 1:
                raise ConfigError("seeds.count must be at least 1")
        if seeds["burn_in"] < 0:
            raise ConfigError("seeds.burn_in must be nonnegative")
        for key, value in s["tolerances"].items():
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f"tolerances.{key} must be positive, got {value!r}")
        if s["grid"]["h"] is not None and not s["grid"]["h"] > 0:
            raise ConfigError("grid.h must be positive")
        schedule = s["horizons"]["schedule"]
        if not schedule or any(t <= 0 for t in schedule) or any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ConfigError(f"horizons.schedule must be positive and increasing, got {schedule}")
        for entry in s["observables"]:
            if not isinstance(entry, dict) or "name" not in entry:
                raise ConfigError(f"observable entries need a name, got {entry!r}")
        self._validate_sensitivity(s["sensitivity"])
        self._validate_regularity(s["regularity"])

    @staticmethod
    def _validate_sensitivity(sens: dict[str, Any]) -> None:
        eps = _numbers("sensitivity.eps_grid", sens["eps_grid"])
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"sensitivity.eps_grid must be positive and strictly decreasing, got {eps}")
        if _integer("sensitivity.probes", sens["probes"]) < 1:
            raise ConfigError("sensitivity.probes must be at least 1")
        window = _numbers("sensitivity.tail_window", sens["tail_window"])
        if len(window) != 2 or not 0 <= window[0] < window[1]:
            raise ConfigError(f"sensitivity.tail_window must be [T0, T1] with 0 <= T0 < T1, got {window}")
        if sens["t_step"] is not None and not _number("sensitivity.t_step", sens["t_step"]) > 0:
            raise ConfigError("sensitivity.t_step must be positive")
        if _integer("sensitivity.max_hops", sens["max_hops"]) < 1:
            raise ConfigError("sensitivity.max_hops must be at least 1")
        if not 0 < _number("sensitivity.saturation", sens["saturation"]) < 1:
            raise ConfigError("sensitivity.saturation must lie in (0, 1)")

    @staticmethod
    def _validate_regularity(reg: dict[str, Any]) -> None:
        for key in ("eps_grid", "delta_grid"):
            values = _numbers(f"regularity.{key}", reg[key])
            if not values or any(v <= 0 for v in values):
                raise ConfigError(f"regularity.{key} must be a nonempty list of positive numbers, got {values}")
        if any(t < 0 for t in _numbers("regularity.t_grid", reg["t_grid"])):
            raise ConfigError("regularity.t_grid must be nonnegative")
        if _integer("regularity.pair_budget", reg["pair_budget"]) < 1:
            raise ConfigError("regularity.pair_budget must be at least 1")
        if not _number("regularity.horizon", reg["horizon"]) > 0:
            raise ConfigError("regularity.horizon must be positive")

    # resolved views

    def resolved(self) -> dict[str, Any]:
        return copy.deepcopy(self.sections)

    def section(self, name: str) -> dict[str, Any]:
        return self.sections[name]

    @property
    def system_name(self) -> str:
        return self.sections["system"]["name"]

    @property
    def tolerances(self) -> dict[str, float]:
        return self.sections["tolerances"]

    @property
    def schedule(self) -> list[float]:
        return [float(t) for t in self.sections["horizons"]["schedule"]]

    @property
    def sample_step(self) -> float | None:
        return self.sections["horizons"]["sample_step"]

    def integrator(self) -> IntegratorConfig:
        cfg = dict(self.sections["integrator"])
        if cfg["max_step"] is None:
            cfg["max_step"] = math.inf
        try:
            return IntegratorConfig(**cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_system(self) -> FlowSystem:
        return build_system(self.system_name, integrator=self.integrator(), **self.sections["system"]["params"])

    def grid_h(self, system: FlowSystem) -> float:
        h = self.sections["grid"]["h"]
        return float(h) if h is not None else system.space.scale / DEFAULT_GRID_DIVISIONS

    def seed_points(self, system: FlowSystem) -> np.ndarray:
        seeds = self.sections["seeds"]
        if seeds["points"] is not None:
            points = np.atleast_2d(np.asarray(seeds["points"], dtype=float))
            if points.shape[1] != system.dimension:
                raise ConfigError(f"seed points need {system.dimension} coordinates, got {points.shape[1]}")
        else:
            rng = np.random.default_rng(int(seeds["rng_seed"]))
            points = system.space.uniform(rng, int(seeds["count"]))
        if seeds["burn_in"] > 0:
            points = np.array([settle(system, p, float(seeds["burn_in"])) for p in points])
        return points

    def observables(self, system: FlowSystem) -> list[ObservableWithGradient]:
        return [build_observable(entry, system) for entry in self.sections["observables"]]

    def output_directory(self) -> Path:
        configured = self.sections["output"]["directory"]
        if configured:
            path = Path(configured)
        elif os.environ.get(OUTPUT_ENV_VAR):
            path = Path(os.environ[OUTPUT_ENV_VAR])
        else:
            path = storage_paths.get_app_data_dir() / "runs"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def rng(self, offset: int = 0) -> np.random.Generator:
        seed = self.sections["seeds"]["rng_seed"]
        return np.random.default_rng((0 if seed is None else int(seed)) + offset)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read a configuration file (or start empty) and apply section-level overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with Path(path).open("r", encoding="utf-8") as handle:
                data = json.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"configuration file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for section, values in (overrides or {}).items():
        if isinstance(values, dict):
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"section '{section}' must be an object")
            data[section].update(values)
        else:
            data[section] = values
    log.debug("configuration sections: %s", sorted(data))
    return ExperimentConfig.from_dict(data)
