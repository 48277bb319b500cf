"""Flat ``key = value`` config documents.

Used for run configs, synthesis specs, and expected-stats tables. Lines
starting with ``#`` or ``;`` are comments. Sections (``[name]``) are allowed
and flatten to ``name.key``.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Mapping

from promptscreen.errors import DataError

_ROOT = "__root__"


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), strict=True
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{_ROOT}]\n" + text, source=source)
    except configparser.Error as exc:
        raise DataError("E-SCHEMA", f"{source}: {exc}") from None
    out: dict[str, str] = {}
    for section in parser.sections():
        prefix = "" if section == _ROOT else section + "."
        for key, value in parser.items(section):
            out[prefix + key] = value.strip()
    return out


def read_flat(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError("E-IO", f"cannot read config {str(path)!r}: {exc}") from None
    return parse_flat(text, str(path))


def dumps_flat(values: Mapping[str, object]) -> str:
    """Serialize a flat mapping, keys sorted, one ``key = value`` per line."""
    return "".join(f"{key} = {_render(values[key])}\n" for key in sorted(values))


def _render(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def as_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def as_list(value: str, cast=str) -> list:
    return [cast(v.strip()) for v in value.split(",") if v.strip()]
