"""Exception types shared across the package."""


class CycleFillError(Exception):
    """Base class for all package errors."""


class ShapeError(CycleFillError, ValueError):
    """Array shape or size does not match what the operation requires."""


class FormatError(CycleFillError, ValueError):
    """File or payload is not in the expected format."""


class DegenerateInputError(CycleFillError, ValueError):
    """Input is structurally valid but degenerate (e.g. empty known region)."""


class MaskGenerationError(CycleFillError, RuntimeError):
    """Random mask synthesis could not meet the requested coverage."""


class CheckpointError(CycleFillError, RuntimeError):
    """Checkpoint file is corrupt, incompatible, or incomplete."""


class ConfigError(CycleFillError, ValueError):
    """Training or CLI configuration is invalid."""


class SelectionError(CycleFillError, RuntimeError):
    """Best-cycle selection requested on a trace without scores."""
