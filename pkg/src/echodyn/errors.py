"""Exception types shared across the pipeline."""


class EchodynError(Exception):
    """Base class for all pipeline errors."""


class FormatError(EchodynError):
    """File contents do not match the expected on-disk format."""


class DimensionError(EchodynError):
    """Array shapes are inconsistent or too small to operate on."""


class GeometryError(EchodynError):
    """Requested phantom geometry does not fit inside the image."""


class InsufficientDataError(EchodynError):
    """Not enough samples/frames for the requested operation."""


class ParameterError(EchodynError):
    """A parameter is outside its valid range."""


class NumericError(EchodynError):
    """Non-finite values where finite ones are required."""


class ModelError(EchodynError):
    """A fitted model does not match the data it is applied to."""


class DivergenceError(EchodynError):
    """Training residual blew up; typically the learning rate is too large."""


class UndefinedDistanceError(EchodynError):
    """Boundary distance requested against an empty mask."""
