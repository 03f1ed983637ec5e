"""Exception hierarchy shared by every ocl component."""

from __future__ import annotations


class OclError(RuntimeError):
    """Base class for all library errors."""


class NumericalError(OclError):
    """Curvature or decomposition failure; the CLI exits with code 3."""


class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class StaleInverse(NumericalError):
    pass


class ShapeMismatch(OclError, ValueError):
    pass


class InvalidClassIndex(OclError, ValueError):
    pass


class EmptyBatch(OclError, ValueError):
    pass


class EmptyBuffer(OclError, ValueError):
    pass


class NoClassInfo(OclError, ValueError):
    pass


class DegenerateDirections(OclError, ValueError):
    pass


class InsufficientClasses(OclError, ValueError):
    pass


class NotSquareInput(OclError, ValueError):
    pass


class ConfigError(OclError, ValueError):
    """Invalid experiment configuration; `field` holds the dotted key path."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        prefix = f"[config] {field}: " if field else "[config] "
        super().__init__(prefix + message)
