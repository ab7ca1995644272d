"""Exception hierarchy shared across the package."""


class SandwichError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SandwichError, ValueError):
    """Operand shapes do not conform."""


class NumericalError(SandwichError, ArithmeticError):
    """A computation produced (or would produce) a non-finite value."""


class DataError(SandwichError, ValueError):
    """Malformed or missing input data (images, manifests, score files)."""


class CheckpointError(SandwichError, ValueError):
    """Checkpoint file is malformed or does not match the requested config."""
