"""Error types.

Every error carries a short code (``E-SCHEMA``, ``E-ONTO-DUP`` ...) so callers
and the CLI can map failures without string matching.
"""

from __future__ import annotations


class ScreenError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 3

    def __init__(self, code: str, message: str, *, line: int | None = None):
        self.code = code
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{code}: {message}{where}")


class DataError(ScreenError):
    """Bad or unusable input data: files, schemas, ontologies, corpora."""

    exit_code = 2


class ModelError(ScreenError):
    """Backend / prefix / training contract violations."""

    exit_code = 3
