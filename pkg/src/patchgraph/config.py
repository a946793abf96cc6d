"""Key/value config text: parsing, formatting, dataclass binding.

Config files are plain text, one ``key = value`` per line, ``#``
comments and blank lines ignored. Dataclasses bind to a key prefix
(``data.``, ``model.``, ``train.``); every recognized key is exactly a
field name, and unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import typing


class ConfigError(Exception):
    """Bad configuration: unknown key, wrong type, or invalid value."""


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def _coerce(value: str, typ, key: str):
    if typ is bool:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from None
    if typ is str:
        return value
    origin = typing.get_origin(typ)
    if origin in (tuple, list):
        items = [v.strip() for v in value.split(",") if v.strip()]
        inner = typing.get_args(typ)[0] if typing.get_args(typ) else int
        return tuple(_coerce(v, inner, key) for v in items)
    raise ConfigError(f"{key}: unsupported config field type {typ!r}")


def dataclass_to_kv(obj, prefix: str = "") -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        out[prefix + f.name] = str(v)
    return out


def dataclass_from_kv(cls, mapping: dict[str, str], prefix: str = ""):
    """Build ``cls`` from the prefixed keys of ``mapping``.

    Keys under the prefix that match no field raise; fields absent from
    the mapping keep their dataclass defaults (fields without defaults
    must be present).
    """
    hints = typing.get_type_hints(cls)
    by_field = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in by_field:
            raise ConfigError(f"unknown key {key!r} (no field {name!r} on {cls.__name__})")
        kwargs[name] = _coerce(value, hints[name], key)
    missing = [
        f.name
        for f in dataclasses.fields(cls)
        if f.name not in kwargs
        and f.default is dataclasses.MISSING
        and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ConfigError(
            f"missing required keys: {', '.join(prefix + m for m in missing)}"
        )
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())
