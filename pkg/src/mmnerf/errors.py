"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs that violate its preconditions."""


class NonFiniteError(ContractError, FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class OutOfBoundsError(ContractError):
    """A query point or pixel falls outside the valid domain."""


class DatasetError(RuntimeError):
    """A dataset on disk is missing files or fails validation."""
