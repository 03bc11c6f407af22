"""Flat ``key = value`` config files mapped onto dataclass fields."""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


def _parse_value(raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if origin is tuple:
        args = typing.get_args(hint)
        if args and typing.get_origin(args[0]) is tuple:  # tuple of (lo, hi) pairs
            pairs = []
            for item in raw.split(","):
                lo, hi = item.strip().split("-")
                pairs.append((float(lo), float(hi)))
            return tuple(pairs)
        elem = args[0] if args else str
        return tuple(_parse_value(x, elem) for x in raw.split(",") if x.strip())
    return raw


def format_value(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{lo:g}-{hi:g}" for lo, hi in value)
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(lines) -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_overrides(cfg, pairs: dict[str, str]):
    """Return a copy of dataclass ``cfg`` with string ``pairs`` parsed onto its fields."""
    hints = typing.get_type_hints(type(cfg))
    names = {f.name for f in dataclasses.fields(cfg)}
    unknown = sorted(set(pairs) - names)
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(unknown)}")
    return dataclasses.replace(cfg, **{k: _parse_value(v, hints[k]) for k, v in pairs.items()})


def load_config(cls, path: str | Path | None = None, overrides: dict[str, str] | None = None):
    cfg = cls()
    if path is not None:
        cfg = apply_overrides(cfg, parse_pairs(Path(path).read_text().splitlines()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def dump_config(cfg) -> str:
    return "".join(f"{f.name} = {format_value(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))
