"""Exception hierarchy shared by every module."""


class MatMlpError(Exception):
    """Base class for all library errors."""


class NonFinite(MatMlpError, ArithmeticError):
    pass


class NoConvergence(MatMlpError, ArithmeticError):
    pass


class NotPositiveDefinite(MatMlpError, ValueError):
    pass


class DimensionMismatch(MatMlpError, ValueError):
    pass


class DegenerateSpectrum(MatMlpError, ArithmeticError):
    """Two eigenvalues are too close for the eigenvector derivative."""


class TraceUnderflow(MatMlpError, ArithmeticError):
    """The kernel matrix collapsed (trace below the floor)."""


class RankDeficient(MatMlpError, ValueError):
    pass


class FormatError(MatMlpError, ValueError):
    pass


class DivergedTraining(MatMlpError, ArithmeticError):
    pass


class ConfigError(MatMlpError, ValueError):
    pass
