"""Flat key-value run configs (a TOML subset) and their resolution.

A config file holds ``TrainConfig`` keys at top level, an optional
``profile = "<name>"`` key, and optional tables (``[run]``, ``[sbm]``) that
carry metadata and are ignored when resolving the training config.
Resolution order: generic defaults, then the named profile, then file keys,
then explicit overrides.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import tomli

from .errors import ArgumentError, ConfigError
from .training import PROFILES, TrainConfig

META_TABLES = ("run", "sbm")


def read_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    raise ConfigError(f"cannot serialise {type(value).__name__} value {value!r}")


def dumps(flat: dict, tables: Optional[dict] = None) -> str:
    """Top-level scalars first, then one ``[name]`` section per table. ``None`` values are dropped."""
    lines = [f"{k} = {_format(v)}" for k, v in flat.items() if v is not None]
    for name, body in (tables or {}).items():
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_format(v)}" for k, v in body.items() if v is not None)
    return "\n".join(lines) + "\n"


def write_config(path, flat: dict, tables: Optional[dict] = None) -> Path:
    path = Path(path)
    path.write_text(dumps(flat, tables))
    return path


def _coerce(key, value):
    """Accept ints for float fields; reject anything else of the wrong type."""
    kind = str(TrainConfig.__dataclass_fields__[key].type).removeprefix("Optional[").rstrip("]")
    if kind == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind == "bool" and not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    if kind == "int" and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if kind == "float" and not isinstance(value, float):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if kind == "str" and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def check_keys(values: dict):
    valid = set(TrainConfig.keys())
    unknown = sorted(k for k in values if k not in valid)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(sorted(valid))}")


def resolve_config(file_values: Optional[dict] = None, profile: Optional[str] = None,
                   **overrides) -> TrainConfig:
    """Build a ``TrainConfig`` from a parsed file, a profile name and overrides.

    A ``profile`` argument wins over a ``profile`` key inside the file.
    """
    values = dict(file_values or {})
    for table in META_TABLES:
        if isinstance(values.get(table), dict):
            values.pop(table)
    file_profile = values.pop("profile", None)
    profile = profile or file_profile
    check_keys(values)
    check_keys(overrides)
    merged = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(sorted(PROFILES))}")
        merged.update(PROFILES[profile])
    merged.update(values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    merged = {k: _coerce(k, v) for k, v in merged.items()}
    try:
        return TrainConfig(**merged)
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, profile: Optional[str] = None, **overrides) -> TrainConfig:
    return resolve_config(read_config(path) if path else None, profile, **overrides)
