"""Exception hierarchy shared by every module.

All domain errors derive from :class:`SubjAdaptError` so the CLI can map
them to exit code 1 in one place.
"""


class SubjAdaptError(Exception):
    """Base class for all domain errors raised by this package."""


class DimensionError(SubjAdaptError, ValueError):
    pass


class ContractError(SubjAdaptError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(SubjAdaptError, ArithmeticError):
    pass


class FormatError(SubjAdaptError, ValueError):
    """Bad magic bytes or an unsupported format version."""


class LengthError(SubjAdaptError, ValueError):
    """A binary file ended before the declared payload."""


class ValidationError(SubjAdaptError, ValueError):
    pass


class CapacityError(SubjAdaptError, ValueError):
    """Not enough samples to satisfy a sampling request."""


class RangeError(SubjAdaptError, IndexError):
    pass


class DivergenceError(SubjAdaptError, ArithmeticError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
