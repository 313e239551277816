"""Exception hierarchy shared by every maskfuse module."""


class MaskfuseError(Exception):
    """Base class for all library errors."""


class DimensionError(MaskfuseError, ValueError):
    """Array shapes disagree with what an operation expects."""


class NumericError(MaskfuseError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class DataError(MaskfuseError, ValueError):
    """Dataset content or configuration violates a precondition."""


class MissingClassError(DataError):
    """A severity class has too few (or zero) samples for the operation."""

    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class FormatError(DataError):
    """Base class for on-disk format problems."""


class MissingFileError(FormatError, FileNotFoundError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ShapeInconsistencyError(FormatError):
    pass


class UnknownLabelError(FormatError):
    pass


class DuplicateSubjectError(FormatError):
    pass


class ReportError(MaskfuseError, ValueError):
    """A metrics report cannot be serialized (e.g. contains NaN)."""
