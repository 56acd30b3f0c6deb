"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the front end never has
to guess how to report a failure.
"""


class DepthError(Exception):
    exit_code = 1


class ParameterError(DepthError, ValueError):
    exit_code = 2


class FormatError(DepthError, ValueError):
    """Malformed file header or payload."""

    exit_code = 3


class SchemaError(FormatError):
    pass


class ValidationError(FormatError):
    pass


class DataError(DepthError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class NumericError(DepthError, ArithmeticError):
    exit_code = 4


class DegenerateError(NumericError):
    """Zero baseline, degenerate epipolar line or similar ill-posed geometry."""


class BehindCameraError(NumericError):
    pass


class DomainError(NumericError):
    """Non-positive depth where a logarithm or ratio is required."""


class EmptyRegionError(NumericError):
    pass


class DivergenceError(NumericError):
    pass
