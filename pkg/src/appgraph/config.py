"""Flat ``key = value`` config files bound to dataclass fields."""

from __future__ import annotations

import dataclasses
import os
import typing
from typing import Any, Mapping, Type, TypeVar, Union

T = TypeVar("T")


class ConfigError(ValueError):
    pass


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def coerce(value: Any, typ: type) -> Any:
    if typ is bool:
        return value if isinstance(value, bool) else parse_bool(str(value))
    if typ is int:
        if isinstance(value, bool):
            raise ValueError(f"not an integer: {value!r}")
        if isinstance(value, int):
            return value
        return int(str(value).strip())
    if typ is float:
        return float(value)
    return value


def read_config_text(path: Union[str, os.PathLike]) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            out[key.strip()] = value.strip()
    return out


def build_config(cls: Type[T], values: Mapping[str, Any], source: str = "config") -> T:
    """Instantiate ``cls`` from string or typed values, rejecting unknown keys."""
    types = field_types(cls)
    kwargs = {}
    for key, value in values.items():
        if key not in types:
            raise ConfigError(f"{source}: unknown key {key!r}; expected one of {sorted(types)}")
        try:
            kwargs[key] = coerce(value, types[key])
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(cls: Type[T], path: Union[str, os.PathLike], overrides: Mapping[str, Any] = ()) -> T:
    values: dict[str, Any] = dict(read_config_text(path)) if path else {}
    values.update(overrides or {})
    return build_config(cls, values, source=str(path) if path else "flags")


def dump_config(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
