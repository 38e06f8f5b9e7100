"""Exception types shared across the package."""


class FathomError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FathomError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(FathomError, ValueError):
    """An operation was called in a way its contract forbids."""


class NumericError(FathomError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DataError(FathomError, ValueError):
    """Input data violates a documented data invariant."""


class SchemaError(DataError):
    """A CSV/schema pair does not describe the same columns."""


class InsufficientDataError(DataError):
    """Not enough rows/windows to satisfy the request."""


class ConfigError(FathomError, ValueError):
    """A run configuration field is missing or invalid."""


class StragglerError(FathomError, RuntimeError):
    """A task node could not furnish its batch for a synchronous round."""

    def __init__(self, node_id, message=""):
        self.node_id = node_id
        super().__init__(message or f"node {node_id!r} cannot furnish its round batch")


class CheckpointError(FathomError, ValueError):
    """A checkpoint does not match the model it is being loaded into."""
