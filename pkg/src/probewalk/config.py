"""Scenario configuration: INI files plus flat ``section.key=value`` overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from probewalk.model import RobotParams
from probewalk.terrain import TerrainModel, terrain_from_mapping


class ConfigError(ValueError):
    pass


# section -> key -> default (as text); anything not listed is rejected
DEFAULTS = {
    "scenario": {
        "name": "scenario",
        "seed": "0",
        "target_distance": "1.0",
        "robot_file": "",
        "start_x": "-0.1",
        "max_sim_time": "400.0",
    },
    "modes": {"vfa_enabled": "false", "probing_enabled": "true", "compare_support": "false"},
    "terrain": {"variant": "Rigid"},
    "planner": {
        "step_length": "0.10",
        "stride": "4.0",
        "to_dt": "0.05",
        "to_max_iter": "12",
        "mpc_horizon": "1.0",
        "mpc_dt": "0.015",
        "mpc_max_iter": "1",
        "alpha": "0.04",
        "friction_coefficient": "0.5",
        "probe_momentum_weight": "10000.0",
        "move_momentum_weight": "500.0",
        "compare_momentum_weight": "10.0",
    },
    "solver": {"to_tol": "1e-6", "mpc_tol": "1e-6", "compare_max_iter": "40"},
    "fsm": {
        "contact_threshold": "20.0",
        "contact_streak": "3",
        "collapse_threshold": "0.03",
        "alternative_spacing": "0.075",
        "leg_up_clearance": "0.15",
        "max_extension_ratio": "0.98",
        "around_swing_duration": "0.3",
    },
    "sim": {
        "dt": "0.004",
        "mpc_period": "0.01",
        "torque_noise": "0.0",
        "contact_stiffness": "10000.0",
        "fall_margin": "0.05",
        "map_resolution": "0.02",
    },
}

TERRAIN_KEYS = {
    "variant", "level", "rows", "columns", "plank_w", "plank_l", "stiffness", "stiffness_jitter", "start_x",
    "drop_depth", "removed", "seed", "length", "width", "cell", "capacity_min", "capacity_max", "settling",
    "height_jitter",
}

POSITIVE = {
    ("scenario", "target_distance"), ("scenario", "max_sim_time"),
    ("planner", "step_length"), ("planner", "stride"), ("planner", "to_dt"), ("planner", "mpc_horizon"),
    ("planner", "mpc_dt"), ("planner", "alpha"), ("planner", "friction_coefficient"), ("planner", "probe_momentum_weight"), ("planner", "move_momentum_weight"),
    ("planner", "compare_momentum_weight"),
    ("planner", "to_max_iter"), ("planner", "mpc_max_iter"),
    ("solver", "to_tol"), ("solver", "mpc_tol"),
    ("fsm", "contact_threshold"), ("fsm", "contact_streak"), ("fsm", "collapse_threshold"),
    ("fsm", "alternative_spacing"), ("fsm", "leg_up_clearance"), ("fsm", "max_extension_ratio"),
    ("fsm", "around_swing_duration"),
    ("sim", "dt"), ("sim", "mpc_period"), ("sim", "contact_stiffness"), ("sim", "fall_margin"),
    ("sim", "map_resolution"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str, key: str) -> bool:
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _num(text: str, key: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def parse_override(item: str) -> tuple[str | None, str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        return section.strip(), name.strip(), value.strip()
    return None, key, value.strip()


@dataclass
class ScenarioConfig:
    values: dict
    source: Path | None = None
    robot: RobotParams = field(default_factory=RobotParams)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def num(self, section: str, key: str) -> float:
        return _num(self.values[section][key], f"{section}.{key}")

    def int(self, section: str, key: str) -> int:
        return int(round(self.num(section, key)))

    def flag(self, section: str, key: str) -> bool:
        return _bool(self.values[section][key], f"{section}.{key}")

    @property
    def name(self) -> str:
        return self.values["scenario"]["name"]

    @property
    def seed(self) -> int:
        return self.int("scenario", "seed")

    @property
    def vfa_enabled(self) -> bool:
        return self.flag("modes", "vfa_enabled")

    @property
    def probing_enabled(self) -> bool:
        return self.flag("modes", "probing_enabled")

    def terrain(self) -> TerrainModel:
        block = dict(self.values["terrain"])
        block.setdefault("seed", str(self.seed))
        try:
            return terrain_from_mapping(block)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"terrain: {exc}") from exc

    def with_overrides(self, overrides) -> "ScenarioConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        apply_overrides(values, overrides)
        return _finish(values, self.source)


def apply_overrides(values: dict, overrides) -> None:
    for item in overrides or ():
        section, key, value = parse_override(item) if isinstance(item, str) else item
        if section is None:
            owners = [s for s, keys in DEFAULTS.items() if key in keys]
            if key in TERRAIN_KEYS and not owners:
                owners = ["terrain"]
            if len(owners) != 1:
                raise ConfigError(f"override key {key!r} is unknown or ambiguous; use section.key")
            section = owners[0]
        if section not in values:
            raise ConfigError(f"unknown section {section!r}")
        values[section][key] = value


def _finish(values: dict, source: Path | None) -> ScenarioConfig:
    for section, keys in values.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = TERRAIN_KEYS if section == "terrain" else DEFAULTS[section].keys()
        for key in keys:
            if key not in allowed:
                raise ConfigError(f"unknown key {section}.{key}")
    for section, key in POSITIVE:
        if _num(values[section][key], f"{section}.{key}") <= 0:
            raise ConfigError(f"{section}.{key} must be positive")
    if _num(values["sim"]["torque_noise"], "sim.torque_noise") < 0:
        raise ConfigError("sim.torque_noise must be non-negative")
    for key in DEFAULTS["modes"]:
        _bool(values["modes"][key], f"modes.{key}")
    _num(values["scenario"]["seed"], "scenario.seed")
    robot = RobotParams()
    robot_file = values["scenario"]["robot_file"].strip()
    if robot_file:
        path = Path(robot_file)
        if not path.is_absolute() and source is not None:
            path = source.parent / path
        if not path.is_file():
            raise ConfigError(f"robot file {path} does not exist")
        try:
            robot = RobotParams.from_file(path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"robot file {path}: {exc}") from exc
    cfg = ScenarioConfig(values, source, robot)
    cfg.terrain()  # validates the terrain block
    return cfg


def load_config(path=None, overrides=()) -> ScenarioConfig:
    """Read an INI scenario (or defaults when ``path`` is None) and apply overrides."""
    values = {s: dict(v) for s, v in DEFAULTS.items()}
    source = None
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise ConfigError(f"config file {source} not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(source)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from exc
        for section in parser.sections():
            if section not in values:
                raise ConfigError(f"unknown section [{section}] in {source}")
            values[section].update(dict(parser[section]))
    apply_overrides(values, overrides)
    return _finish(values, source)
