"""Seed derivation and the plain-text ``key = value`` config format."""
from __future__ import annotations

import dataclasses
import hashlib


def derive_seed(master: int, *names) -> int:
    """Stable 63-bit sub-seed for ``master`` and a path of names.

    ``derive_seed(7, "synth", 3)`` always gives the same value, independent of
    how many other sub-seeds were drawn before it.
    """
    key = ":".join(["seed", str(int(master))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p for p in value.replace(",", " ").split() if p]
        kind = type(current[0]) if current else float
        return tuple(kind(p) for p in parts)
    return value


def apply_overrides(obj, values: dict[str, str], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with matching ``prefix.field`` keys applied."""
    changes = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        if key in values:
            changes[f.name] = _coerce(values[key], getattr(obj, f.name))
    return dataclasses.replace(obj, **changes) if changes else obj
