"""
Exception hierarchy. Every error carries the process exit code the CLI
reports for it (1 = invalid input, 2 = numerical failure).
"""

from __future__ import annotations

from typing import Any


class LabError(Exception):
    exit_code: int = 1


class InvalidInputError(LabError, ValueError):
    """Configuration, CFL, window-class or corner-compatibility violation."""

    exit_code = 1


class GeometryError(InvalidInputError):
    """Background fails a causal-character or nondegeneracy requirement."""


class NumericalFailure(LabError, RuntimeError):
    exit_code = 2

    def __init__(self, message: str, step: int | None = None, **context: Any) -> None:
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
        self.context = context
