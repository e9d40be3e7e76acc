"""Exception hierarchy shared across the package."""


class PanolocError(Exception):
    """Base class for all errors raised by this package."""


class DegeneratePoint(PanolocError):
    """A 3D point coincides with the camera center and cannot be projected."""


class ParseError(PanolocError):
    """A file could not be parsed (malformed header, bad counts, ...)."""


class MissingProperty(ParseError):
    """A PLY file lacks a required vertex property (e.g. color)."""


class AspectError(ParseError):
    """A panorama image does not have the required 2:1 aspect ratio."""


class IoError(PanolocError):
    """A file could not be read or written."""


class InvalidSpec(PanolocError):
    """A scene specification is malformed or inconsistent."""


class NonIntegerShift(PanolocError):
    """A yaw angle does not correspond to an integer pixel shift."""


class GridMismatch(PanolocError):
    """Patch grids or image sizes of two operands do not agree."""


class EmptyViewSet(PanolocError):
    """A score map was requested over an empty view collection."""


class NoFreeSpace(PanolocError):
    """The free-space partition contains no empty cells."""


class EmptyCandidateSet(PanolocError):
    """Candidate ranking was requested over an empty pose set."""


class EmptyInput(PanolocError):
    """An aggregation was requested over an empty input list."""


class MissingGroundTruth(PanolocError):
    """Evaluation requires ground-truth poses that are absent."""


class ConfigError(PanolocError):
    """A pipeline configuration value is invalid."""
