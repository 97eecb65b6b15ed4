"""Line-based ``key = value`` config files.

Blank lines and ``#`` comments are ignored. Values are coerced to the type
of the matching dataclass field; unknown keys are an error so typos surface.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_kv(p.read_text(), str(p))


def write_kv(values: dict, path) -> None:
    Path(path).write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in values.items()))


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def coerce(value, tp, key):
    """Convert a string config value to ``tp``; non-strings pass through."""
    return _coerce(value, tp, key)


def _coerce(value, tp, key):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if isinstance(value, str) and value.lower() in ("none", ""):
            return None
        return _coerce(value, inner[0], key)
    if not isinstance(value, str):
        return value
    try:
        if tp is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
        if origin is tuple:
            return tuple(_coerce(v.strip(), args[0], key) for v in value.split(",") if v.strip())
        return value
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {value!r} as {getattr(tp, '__name__', tp)}") from None


def build(cls, values: dict, strict: bool = True):
    """Instantiate dataclass ``cls`` from string or typed values."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown and strict:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in values.items() if k in names}
    return cls(**kwargs)


def pick(values: dict, cls) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in values.items() if k in names}
