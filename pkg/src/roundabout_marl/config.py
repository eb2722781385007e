"""Strict JSON run configuration.

One document configures everything: geometry, environment, rewards, the
actor-critic hyperparameters, the trainer, sweeps, and output paths. Every
field has a default; unknown keys and type mismatches are hard errors with
a best-effort line number, so silently ignored hyperparameters cannot
happen. The resolved configuration round-trips through JSON bit-exactly,
which is what makes the config echo written next to every run replayable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .env import EnvConfig, RewardConfig
from .evaluation import SweepSpec
from .geometry import GeometryConfig
from .rl import RLConfig
from .training import TrainerConfig


class ConfigError(ValueError):
    """Raised for any malformed, unknown, or ill-typed configuration input."""


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig = GeometryConfig()
    env: EnvConfig = EnvConfig()
    reward: RewardConfig = RewardConfig()
    rl: RLConfig = RLConfig()
    trainer: TrainerConfig = TrainerConfig()
    sweep: SweepSpec = SweepSpec()
    output: OutputConfig = OutputConfig()


_SECTIONS = {
    "geometry": GeometryConfig,
    "env": EnvConfig,
    "reward": RewardConfig,
    "rl": RLConfig,
    "trainer": TrainerConfig,
    "sweep": SweepSpec,
    "output": OutputConfig,
}

# fields that are tuples in the dataclasses but lists in JSON
_TUPLE_FIELDS = {
    ("geometry", "leg_angles_deg"): 3,
    ("env", "target_speed_range"): 2,
    ("sweep", "values"): None,
}

_ENUM_FIELDS = {
    ("env", "speed_cap_mode"): ("global_cap", "target_cap"),
    ("sweep", "parameter"): ("aggressiveness", "target_speed"),
}

_OPTIONAL_INT_FIELDS = {("trainer", "checkpoint_every"), ("trainer", "max_env_steps")}


def _line_of(source: str, key: str) -> str:
    for i, line in enumerate(source.splitlines(), start=1):
        if f'"{key}"' in line:
            return f" (line {i})"
    return ""


def _coerce(path: str, value: Any, target_type: type, source: str) -> Any:
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}{_line_of(source, path.split('.')[-1])}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}{_line_of(source, path.split('.')[-1])}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}{_line_of(source, path.split('.')[-1])}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}{_line_of(source, path.split('.')[-1])}")
        return value
    raise ConfigError(f"{path}: unsupported field type {target_type!r}")


def _build_section(name: str, data: dict, source: str):
    cls = _SECTIONS[name]
    valid = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{name}.{key}"
        if key not in valid:
            raise ConfigError(f"unknown key {path!r}{_line_of(source, key)}")
        if (name, key) in _TUPLE_FIELDS:
            want_len = _TUPLE_FIELDS[(name, key)]
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list of numbers{_line_of(source, key)}")
            if want_len is not None and len(value) != want_len:
                raise ConfigError(f"{path}: expected exactly {want_len} entries{_line_of(source, key)}")
            kwargs[key] = tuple(_coerce(f"{path}[{i}]", v, float, source) for i, v in enumerate(value))
        elif (name, key) in _ENUM_FIELDS:
            value = _coerce(path, value, str, source)
            allowed = _ENUM_FIELDS[(name, key)]
            if value not in allowed:
                raise ConfigError(f"{path}: must be one of {allowed}{_line_of(source, key)}")
            kwargs[key] = value
        elif (name, key) in _OPTIONAL_INT_FIELDS:
            if value is None:
                kwargs[key] = None
            else:
                kwargs[key] = _coerce(path, value, int, source)
        else:
            default = valid[key].default
            if default is dataclasses.MISSING:
                default = valid[key].default_factory()  # type: ignore[misc]
            kwargs[key] = _coerce(path, value, type(default), source)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config_text(source: str, origin: str = "<config>") -> RunConfig:
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be a JSON object")
    sections = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key {key!r}{_line_of(source, key)}")
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object{_line_of(source, key)}")
        sections[key] = _build_section(key, value, source)
    defaults = RunConfig()
    return RunConfig(**{name: sections.get(name, getattr(defaults, name)) for name in _SECTIONS})


def parse_config(path) -> RunConfig:
    """Strictly parse a JSON config file; defaults fill whatever is absent."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), origin=str(p))


def config_to_json(cfg: RunConfig) -> str:
    """Serialize the fully resolved configuration (the run's config echo)."""
    doc = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        entry = {}
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            entry[f.name] = list(value) if isinstance(value, tuple) else value
        doc[name] = entry
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
