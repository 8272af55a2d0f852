"""Diagnostics and source positions.

All user-facing errors are reported as ``file:line:col: code: message``
on stderr; ``code`` identifies the rule that was violated.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Pos:
    """A source position (1-based line, 1-based column)."""

    file: str = "<string>"
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


NOPOS = Pos()


@dataclass(frozen=True)
class Diagnostic:
    pos: Pos
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.pos}: {self.code}: {self.message}"


class CompileError(Exception):
    """Raised when compilation cannot continue.

    Carries one or more diagnostics; the CLI prints them and exits 1.
    """

    def __init__(self, diags, message: str | None = None):
        if isinstance(diags, Diagnostic):
            diags = [diags]
        self.diagnostics: list[Diagnostic] = list(diags)
        super().__init__(message or "; ".join(str(d) for d in self.diagnostics))


class InternalError(Exception):
    """An invariant of the pipeline was broken (exit code 2, not a user error)."""


def error(pos: Pos, code: str, message: str) -> CompileError:
    return CompileError(Diagnostic(pos, code, message))
