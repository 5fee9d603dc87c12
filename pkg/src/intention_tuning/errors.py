"""Exception types shared across the package."""


class ArtifactError(Exception):
    """Base class for every error this package raises on purpose."""


class ValidationError(ArtifactError, ValueError):
    """An input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor dimensions do not agree."""


class SchemaError(ValidationError):
    """A corpus record is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TaxonomyError(ValidationError):
    """An intention label is not part of the declared taxonomy."""


class NumericError(ArtifactError, ArithmeticError):
    """A non-finite value reached a numerically sensitive kernel."""


class StateError(ArtifactError, RuntimeError):
    """An operation was called before the state it depends on exists."""
