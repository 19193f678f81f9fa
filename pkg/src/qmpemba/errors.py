"""Exception hierarchy shared by all qmpemba modules."""

from __future__ import annotations


class QMpembaError(Exception):
    """Base class for every error raised by this package."""


class InvalidStateError(QMpembaError, ValueError):
    """Matrix is not a valid qubit density matrix."""


class InvalidParameterError(QMpembaError, ValueError):
    """System or run parameters violate their invariants."""


class InvalidTemperatureError(InvalidParameterError):
    pass


class DegenerateHamiltonianError(InvalidParameterError):
    pass


class BlochNormExceededError(InvalidStateError):
    pass


class UnequalRatesUnsupportedError(QMpembaError):
    """A closed-form result was requested for gamma_minus != gamma_y."""


class NoPhysicalRootError(QMpembaError):
    pass


class EigenmodeSingularityError(QMpembaError, ArithmeticError):
    pass


class NoUniqueSteadyStateError(QMpembaError):
    pass


class NearDefectiveMatrixError(QMpembaError, ArithmeticError):
    """Eigenvector basis too ill-conditioned for a spectral decomposition."""


class DefectiveSpectrumError(NearDefectiveMatrixError):
    """Spectral propagation refused; use the ODE integrator instead."""


class StepTooLargeError(QMpembaError):
    pass


class DistanceUnderflowError(QMpembaError, ArithmeticError):
    pass


class BracketFailureError(QMpembaError):
    """A 1-D search found its optimum on the bracket boundary.

    Attributes:
        boundary: the bracket endpoint where the coarse scan bottomed out.
    """

    def __init__(self, message: str, boundary: float):
        super().__init__(message)
        self.boundary = boundary


class AlreadyConvergedError(QMpembaError):
    pass


class GridMismatchError(QMpembaError, ValueError):
    pass


class RateMismatchError(QMpembaError, ValueError):
    pass
