# errors.py
# Every library failure derives from PakfError so the CLI can map it to an exit code.
# The second base keeps the builtin category, e.g. `except ValueError` still works.


class PakfError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(PakfError, ValueError):
    """A covariance failed the Cholesky pivot test."""


class NonPositiveVariance(PakfError, ValueError):
    pass


class DegenerateMass(PakfError, ArithmeticError):
    """Truncation interval carries (numerically) no probability mass."""


class EmptyMixture(PakfError, ValueError):
    pass


class DimensionMismatch(PakfError, ValueError):
    pass


class IndexOutOfRange(PakfError, IndexError):
    pass


class AllRegionsDegenerate(PakfError, ArithmeticError):
    """Every PAKF mixture component was dropped; model and data disagree grossly."""


class AllWeightsZero(PakfError, ArithmeticError):
    pass


class LengthMismatch(PakfError, ValueError):
    pass


class ConfigError(PakfError, ValueError):
    """Bad configuration, model file or trajectory file (CLI exit code 2)."""
