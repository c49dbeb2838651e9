"""Flat ``key = value`` configuration files with dotted sections.

Top-level training fields use plain keys (``total_steps``, ``seed``); nested
settings live under ``critic.``, ``gbc.``, ``entropy.`` and ``net.``. Lines
starting with ``#`` are comments. The special key ``demo`` names the
demonstration file.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path
from typing import Any, Iterable

from sigent.errors import ConfigError
from sigent.trainer import TrainConfig

SECTIONS = ("entropy", "gbc", "critic", "net")
EXTRA_KEYS = ("demo",)


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _parse_value(key: str, text: str, default: Any, type_hint: str) -> Any:
    text = text.strip()
    nullable = "None" in str(type_hint)
    if nullable and text.lower() in ("none", "null", ""):
        return None
    try:
        if isinstance(default, bool) or type_hint == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple) or "tuple" in str(type_hint):
            return tuple(int(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
        if isinstance(default, int) or str(type_hint).startswith("int"):
            return int(text)
        if isinstance(default, float) or "float" in str(type_hint):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.rstrip()!r}")
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_config(values: dict[str, str], base: TrainConfig | None = None) -> tuple[TrainConfig, dict[str, str]]:
    """Apply string values onto ``base``; returns the config and any extra keys (``demo``)."""
    base = base or TrainConfig()
    top = _field_types(TrainConfig)
    top_changes: dict[str, Any] = {}
    nested: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    extras = {}
    for key, text in values.items():
        if key in EXTRA_KEYS:
            extras[key] = text
            continue
        section, dot, name = key.partition(".")
        if dot:
            if section not in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            sub = getattr(base, section)
            fields = _field_types(type(sub))
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            nested[section][name] = _parse_value(key, text, getattr(sub, name), fields[name].type)
        else:
            if key not in top or key in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            top_changes[key] = _parse_value(key, text, getattr(base, key), top[key].type)
    try:
        for section, changes in nested.items():
            if changes:
                top_changes[section] = dataclasses.replace(getattr(base, section), **changes)
        return dataclasses.replace(base, **top_changes), extras
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> tuple[TrainConfig, dict[str, str]]:
    values = {}
    if path is not None:
        path = Path(path)
        try:
            values = parse_lines(path.read_text().splitlines(), str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values.update(parse_overrides(overrides))
    return build_config(values)


def flatten(cfg: TrainConfig) -> dict[str, str]:
    """Every effective setting, defaults included, as dotted key -> text."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for g in dataclasses.fields(value):
                out[f"{f.name}.{g.name}"] = _format_value(getattr(value, g.name))
        else:
            out[f.name] = _format_value(value)
    return out


def dump_config(cfg: TrainConfig, extras: dict[str, str] | None = None) -> str:
    flat = flatten(cfg)
    flat.update(extras or {})
    return "".join(f"{k} = {v}\n" for k, v in sorted(flat.items()))


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parse_sweep(path: str | Path) -> list[dict[str, str]]:
    """A sweep file lists ``key = v1, v2, ...`` grids; returns one override dict per cell.

    Cells enumerate the Cartesian product in file order, last key fastest.
    """
    grids = parse_lines(Path(path).read_text().splitlines(), str(path))
    if not grids:
        raise ConfigError(f"sweep file {path} lists no keys")
    cells: list[dict[str, str]] = [{}]
    for key, text in grids.items():
        options = [v.strip() for v in text.split(",") if v.strip()]
        if not options:
            raise ConfigError(f"sweep key {key!r} has no values")
        cells = [{**c, key: v} for c in cells for v in options]
    return cells
