"""Flat ``key = value`` config files with dotted section names.

Values are JSON literals (numbers, strings, lists, booleans, null); ``#``
starts a comment line. Nested dataclasses flatten to dotted keys::

    preset = "toy_dcac"
    detector.fpn.fpn_channels = 64
    train.epochs = 30
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any

from pcbdet.errors import ConfigError


def to_flat(obj, prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            flat.update(to_flat(value, key + "."))
        else:
            flat[key] = list(value) if isinstance(value, tuple) else value
    return flat


def dumps(flat: dict[str, Any]) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in flat.items())


def loads(text: str, source: str = "<config>") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        try:
            flat[key] = json.loads(value.strip())
        except json.JSONDecodeError:
            raise ConfigError(f"{source}:{lineno}: value for {key!r} is not a valid literal") from None
    return flat


def _coerce(current, value, key: str):
    if isinstance(current, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"config field {key!r} expects a list")
        if current and isinstance(current[0], tuple):
            return tuple(tuple(v) for v in value)
        return tuple(value)
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"config field {key!r} expects true/false")
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def apply_overrides(obj, flat: dict[str, Any], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with dotted-key overrides applied.

    Unknown keys raise :class:`ConfigError` naming the field.
    """
    names = {f.name for f in dataclasses.fields(obj)}
    grouped: dict[str, dict[str, Any]] = {}
    direct: dict[str, Any] = {}
    for key, value in flat.items():
        head, _, rest = key.partition(".")
        if head not in names:
            raise ConfigError(f"unknown config field {prefix + key!r}")
        if rest:
            grouped.setdefault(head, {})[rest] = value
        else:
            direct[head] = value
    changes = {}
    for name, value in direct.items():
        current = getattr(obj, name)
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"config field {prefix + name!r} is a section; set its members instead")
        changes[name] = _coerce(current, value, prefix + name)
    for name, sub in grouped.items():
        current = getattr(obj, name)
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"config field {prefix + name!r} has no members")
        changes[name] = apply_overrides(current, sub, prefix + name + ".")
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {prefix or '<root>'!r}: {exc}") from None


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
