"""Exception types shared by the pnet modules."""


class PNetError(Exception):
    """Base class for all errors raised by pnet."""


class DataError(PNetError, ValueError):
    """Input data violates a documented invariant (bad file, bad ids, bad values)."""


class EmptyMatrixError(DataError):
    """A filter removed every row of a matrix."""


class DegenerateLabelsError(DataError):
    """A label set lacks one of the two classes, or a class is too small."""


class SplitError(PNetError):
    """No admissible train/test split could be drawn within the attempt cap."""
