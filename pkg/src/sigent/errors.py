"""Exception hierarchy shared across the package."""


class SigentError(Exception):
    """Base class for all library errors."""


class StructuralError(SigentError, ValueError):
    """Shapes, architectures or graph structure do not line up."""


class NumericalError(SigentError, ArithmeticError):
    """A non-finite value showed up where finite numbers are required."""


class ConfigError(SigentError, ValueError):
    """Invalid or inconsistent configuration."""


class ValidationError(SigentError, ValueError):
    """Input data violates a documented range or dimension contract."""


class ContractError(SigentError, RuntimeError):
    """An API was used out of order (e.g. stepping a finished episode)."""


class DemoFormatError(SigentError, ValueError):
    """A demonstration file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDemoError(DemoFormatError):
    """The demonstration holds no transitions."""


class CheckpointFormatError(SigentError, ValueError):
    """A parameter file is truncated, corrupt or of an unknown version."""
