"""Flat ``key=value`` text used by config files and checkpoint headers."""
from __future__ import annotations

import dataclasses
from typing import Any, Mapping

from .errors import DataError


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise DataError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_kv(items: Mapping[str, Any]) -> str:
    return "".join(f"{k}={_format_value(v)}\n" for k, v in items.items())


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(value: str, typ: Any, key: str) -> Any:
    try:
        if typ is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ == "int_tuple":
            return tuple(int(x) for x in value.split(",") if x.strip()) if value else ()
        return value
    except ValueError:
        raise DataError(f"bad value for {key!r}: {value!r}") from None


def dataclass_from_kv(cls, items: Mapping[str, str], aliases: Mapping[str, str] | None = None):
    """Build dataclass ``cls`` from string items; unknown keys are rejected.

    Field types come from ``field.metadata['kv']`` when present, else from the
    default value's type.
    """
    aliases = dict(aliases or {})
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in items.items():
        name = aliases.get(key, key)
        if name not in fields:
            raise DataError(f"unknown key {key!r} for {cls.__name__}")
        f = fields[name]
        typ = f.metadata.get("kv")
        if typ is None:
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            typ = type(default)
        kwargs[name] = _coerce(value, typ, key)
    return cls(**kwargs)
