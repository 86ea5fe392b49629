"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration problems exit 1,
data problems exit 2 and numerical failures exit 3.
"""


class SdbError(Exception):
    exit_code = 1


class ConfigError(SdbError):
    exit_code = 1


class DataError(SdbError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RejectionError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(DataError):
    pass


class DegenerateDimensionError(DataError):
    def __init__(self, dim, message=None):
        super().__init__(message or f"input dimension {dim} is constant")
        self.dim = dim


class NumericalError(SdbError):
    exit_code = 3


class DegenerateGeometryError(NumericalError):
    pass


class CurveFitError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EmbeddingDivergedError(NumericalError):
    def __init__(self, epoch):
        super().__init__(f"embedding diverged: non-finite gradient at epoch {epoch}")
        self.epoch = epoch


class DivergedError(NumericalError):
    def __init__(self, epoch):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch


class ExportError(SdbError):
    exit_code = 2

