"""
Exception hierarchy for the GE toolkit.

Every error carries the exit code the command line maps it to
(2 usage, 3 config/shape, 4 numeric/training failure).
"""


class GEError(Exception):
    exit_code = 1


class DimensionError(GEError, ValueError):
    exit_code = 3


class ShapeError(DimensionError):
    exit_code = 3


class ContractError(GEError, ValueError):
    exit_code = 3


class ConfigError(GEError):
    exit_code = 3


class FormatError(GEError):
    exit_code = 3

    def __init__(self, message, offset=None, tensor=None):
        self.offset = offset
        self.tensor = tensor
        details = []
        if tensor is not None:
            details.append(f"tensor '{tensor}'")
        if offset is not None:
            details.append(f"offset {offset}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class ImageIOError(GEError, OSError):
    exit_code = 3


class NumericError(GEError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericError):

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)


class SolverError(NumericError):

    def __init__(self, message, restart=None, step=None):
        self.restart = restart
        self.step = step
        super().__init__(f"{message} (restart {restart}, step {step})")
