"""Exception hierarchy shared by all faceaging modules."""


class FaceAgingError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(FaceAgingError):
    """A text input contained a token that could not be parsed."""


class MalformedLandmarks(FaceAgingError):
    """A landmark file did not contain exactly 68 points."""


class SchemaError(FaceAgingError):
    """A manifest row or header violated the expected schema."""


class RangeError(FaceAgingError):
    """A numeric field fell outside its allowed range."""


class IoError(FaceAgingError):
    """A file could not be read or decoded."""


class LandmarkOutOfBounds(FaceAgingError):
    """A landmark coordinate fell outside the image raster."""


class DegenerateShape(FaceAgingError):
    """A landmark configuration was degenerate (coincident or collinear)."""


class EmptyInput(FaceAgingError):
    """An operation requiring a nonempty collection received an empty one."""


class ShapeError(FaceAgingError):
    """Array dimensions were inconsistent with the operation's contract."""


class NumericError(FaceAgingError):
    """An input contained non-finite values or a computation diverged."""


class DegenerateAtom(FaceAgingError):
    """A dictionary atom had zero norm."""


class DegenerateInput(FaceAgingError):
    """A matrix input was rank deficient where full rank is required."""


class DataError(FaceAgingError):
    """Training or request data did not cover the required cells."""


class UsageError(FaceAgingError):
    """Command line arguments could not be interpreted."""
