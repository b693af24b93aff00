"""Flat key-value text configs.

Format: one ``key = value`` per line, ``#`` comments, blank lines ignored.
Values are stored in SI units. Lists are comma separated. This is the
serialization used for phantom / preprocessing / training configs so runs
can be reproduced from a single text file.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(s: str) -> Any:
    s = s.strip()
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    if s.lower() in ("none", ""):
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def parse_value(s: str) -> Any:
    s = s.strip()
    if "," in s:
        return [_parse_scalar(p) for p in s.split(",")]
    return _parse_scalar(s)


def write_kv(path: str | Path, items: dict[str, Any]) -> None:
    lines = [f"{k} = {_format_value(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path: str | Path) -> dict[str, Any]:
    items: dict[str, Any] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, val = line.split("=", 1)
        items[key.strip()] = parse_value(val)
    return items


def dataclass_to_kv(obj: Any) -> dict[str, Any]:
    return dataclasses.asdict(obj)


def dataclass_from_kv(cls: type, items: dict[str, Any]) -> Any:
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(items) - field_names
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in items:
            v = items[f.name]
            if f.type in ("tuple", tuple) or (isinstance(v, list) and "tuple" in str(f.type)):
                v = tuple(v)
            kwargs[f.name] = v
    return cls(**kwargs)
