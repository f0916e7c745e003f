"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SimmError(Exception):
    exit_code = 1


class UsageError(SimmError):
    exit_code = 2


class DataError(SimmError):
    """Structural problem with the input data (imbalance, NaN, too few rows)."""

    exit_code = 3


class ConvergenceError(SimmError):
    exit_code = 4


class NumericalError(SimmError):
    exit_code = 5


class InsufficientLocalData(NumericalError):
    """The local linear system at ``u`` is singular or nearly so."""

    def __init__(self, u, effective_n, message=None):
        self.u = float(u)
        self.effective_n = int(effective_n)
        if message is None:
            message = (
                f"insufficient local data at u={self.u:.6g}: "
                f"{self.effective_n} observation(s) inside the kernel window"
            )
        super().__init__(message)


class NonIdentifiableDirection(NumericalError):
    def __init__(self, null_vector, message=None):
        self.null_vector = null_vector
        if message is None:
            message = f"non-identifiable direction: scoring matrix is singular along {null_vector}"
        super().__init__(message)


class DegenerateAnchor(NumericalError):
    """The anchor component is too close to zero; pick another anchor."""
