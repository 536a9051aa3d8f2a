"""Shared exception types. Raised at contract boundaries, never for control flow."""


class ShapeError(ValueError):
    """Operand shapes are incompatible; message names both shapes."""


class ConfigError(ValueError):
    """Invalid or unsupported configuration value."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateBatchError(ContractError):
    """Batch statistics requested over fewer than two samples."""


class DegenerateRotationError(ContractError):
    """Blended rotation matrix collapsed (non-positive determinant)."""


class PoisonedGradientError(RuntimeError):
    """NaN/Inf gradient reached the optimizer; the step is aborted."""


class FormatError(ValueError):
    """A binary/text file does not match its declared format."""
