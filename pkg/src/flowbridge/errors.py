"""Exception hierarchy shared across the package."""


class ContractError(ValueError):
    """A precondition on arguments was violated."""


class DimensionError(ContractError):
    """Array shapes do not conform to an operation's rule."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


class FormatError(ValueError):
    """A serialized file is malformed or has an unsupported version."""
