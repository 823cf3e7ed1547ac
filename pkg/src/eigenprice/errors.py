"""Exception types shared across the package."""


class EigenpriceError(Exception):
    """Base class for all package errors."""


class QuadratureError(EigenpriceError):
    """An adaptive integral failed to converge or its error estimate is unusable."""


class ClassificationError(EigenpriceError):
    """A boundary-classification integral could not be decided (oscillatory or too slow)."""


class SolvabilityError(EigenpriceError):
    """A Poisson equation right-hand side violates the centering condition."""


class SeriesError(EigenpriceError):
    """An eigenfunction series failed to meet its truncation tolerance."""


class NoSolutionError(EigenpriceError):
    """A root-finding problem has no solution in the admissible range."""
