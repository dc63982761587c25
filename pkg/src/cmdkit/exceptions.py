"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class CMDError(Exception):
    exit_code = 1


class ConfigError(CMDError, ValueError):
    exit_code = 2


class DivergenceError(CMDError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DegenerateDataError(CMDError, ValueError):
    """Too few nonconstant trajectories, singular reference, and similar."""

    exit_code = 4


class UndefinedCorrelationError(DegenerateDataError):
    pass


class TrajectoryFormatError(CMDError, ValueError):
    exit_code = 5


class LayerIndexError(TrajectoryFormatError):
    pass


class TrajectoryDataError(TrajectoryFormatError):
    pass


class SchemaError(CMDError, ValueError):
    exit_code = 5


class ShapeMismatchError(CMDError, ValueError):
    exit_code = 2
