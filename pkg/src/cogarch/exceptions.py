"""Exception hierarchy for the cogarch package."""


class CogarchError(Exception):
    """Base class for all package errors."""


class ShapeError(CogarchError, ValueError):
    """Array has the wrong shape (non-square matrix, length mismatch, ...)."""


class InvalidOrderError(CogarchError, ValueError):
    """Model order or coefficient vector is invalid."""


class DomainError(CogarchError, ValueError):
    """Argument outside its admissible domain."""


class StationarityError(CogarchError):
    """Parameters violate a stationarity requirement (e.g. b_q - a_1 mu <= 0)."""


class NumericalError(CogarchError):
    """Singular or ill-conditioned linear algebra."""


class NonnegativityError(CogarchError):
    """The variance process went negative during a simulation.

    Attributes
    ----------
    time : float
        Time at which the negative variance was encountered.
    value : float
        The offending variance value.
    """

    def __init__(self, time, value):
        self.time = float(time)
        self.value = float(value)
        super().__init__(f"negative variance {self.value:.6g} at t={self.time:.6g}")


class FilterDegeneracyError(CogarchError):
    """alpha0 + a'Y became nonpositive inside the state filter."""


class InfeasibleStartError(CogarchError):
    """No start point of the optimizer produced a feasible objective value."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
