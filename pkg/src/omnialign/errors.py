"""Exception types shared across the package."""

from __future__ import annotations

from .numerics.tensor import NonFiniteError, ShapeError

DimensionError = ShapeError


class ConfigurationError(ValueError):
    """A model or run configuration is inconsistent."""


class EmptyInputError(ValueError):
    """An operation received an empty collection where at least one item is required."""


class LengthError(ValueError):
    """A sequence is longer than the configured maximum."""


class PreconditionError(RuntimeError):
    """A required artifact (checkpoint, dataset) is missing."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss; a diagnostic snapshot was written."""

    def __init__(self, message: str, snapshot: str | None = None):
        super().__init__(message if snapshot is None else f"{message} (snapshot: {snapshot})")
        self.snapshot = snapshot


__all__ = [
    "ConfigurationError", "DimensionError", "EmptyInputError", "LengthError", "NonFiniteError",
    "NumericalAbort", "PreconditionError", "ShapeError",
]
