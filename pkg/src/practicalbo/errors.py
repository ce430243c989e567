"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An input violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A linear-algebra or sampling routine could not complete."""


class ExhaustedGridError(RuntimeError):
    """Every grid point is already completed or pending."""


class EmptyStateError(RuntimeError):
    """The optimizer has no completed observations yet."""


class StateFormatError(ValueError):
    """A persisted state document is malformed."""


class UnsupportedVersionError(StateFormatError):
    """A persisted state document carries a version this code cannot read."""
