"""Flat key=value records used for manifests, metadata and configs."""

from __future__ import annotations

import math
import shlex
from pathlib import Path


def parse_kv_line(line: str) -> dict:
    out = {}
    for token in shlex.split(line, comments=True):
        if "=" not in token:
            raise ValueError(f"expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    text = str(value)
    return shlex.quote(text) if (not text or any(c.isspace() for c in text)) else text


def format_kv(record: dict, sep: str = "\n") -> str:
    return sep.join(f"{k}={_fmt(v)}" for k, v in record.items())


def read_kv_file(path) -> dict:
    """One key=value per line (or several per line); later keys win."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            out.update(parse_kv_line(line))
    return out


def apply_overrides(record: dict, overrides) -> dict:
    out = dict(record)
    for item in overrides or ():
        out.update(parse_kv_line(item))
    return out
