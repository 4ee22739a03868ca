"""Exception hierarchy.

The CLI maps these onto exit codes: validation-type errors exit 1,
numeric errors exit 3 (I/O errors come from ``OSError`` and exit 2).
"""


class URLMatchError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(URLMatchError, ValueError):
    """Bad configuration or malformed input."""


class DimensionError(ValidationError):
    """Operand shapes are incompatible."""


class ContractError(ValidationError):
    """A documented precondition of an operation does not hold."""


class IncompleteCollectionError(ContractError):
    """A matching collection is missing a required (i, j) entry."""


class FactorizationError(ContractError):
    """Pairwise matchings cannot be written as universe matchings."""


class InfeasibleError(ValidationError):
    """An assignment problem has more rows than columns."""


class SizeLimitError(ValidationError):
    """Exhaustive enumeration was asked for a too-large instance."""


class SupervisionError(ContractError):
    """A graph used for training carries no ground-truth labels."""


class CheckpointError(ValidationError):
    """A checkpoint is malformed or does not fit the dataset."""


class NumericError(URLMatchError, ArithmeticError):
    """A computation produced a non-finite value."""
