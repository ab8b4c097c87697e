"""Exception hierarchy shared by every module.

The CLI prints ``type(exc).__name__`` as the machine-parseable error class,
so keep names stable.
"""


class PlgaError(Exception):
    """Base class for all package errors."""


class DimensionError(PlgaError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(PlgaError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class DegenerateRowError(PlgaError, ValueError):
    """A masked softmax row has no unmasked entry."""


class NonFiniteError(PlgaError, FloatingPointError):
    """A kernel produced NaN or Inf."""


class ContractError(PlgaError, ValueError):
    """A caller violated an operation precondition."""


class InputError(PlgaError, ValueError):
    """User-supplied data is malformed or out of range."""


class FormatError(PlgaError, ValueError):
    """A persisted file is corrupt or has an unexpected layout."""


class TrainingDiverged(PlgaError, FloatingPointError):
    """Training produced a non-finite loss.

    ``last_good`` holds a snapshot of the parameters from the last finite step.
    """

    def __init__(self, message, step=None, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good
