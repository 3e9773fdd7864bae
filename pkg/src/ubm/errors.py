"""Exception hierarchy shared by every module of the package."""


class UBMError(Exception):
    """Base class for all errors raised by :mod:`ubm`."""


class DimensionError(UBMError, ValueError):
    """Operands have incompatible or invalid shapes."""


class NotHermitianError(UBMError, ValueError):
    """A matrix expected to be Hermitian is not, within tolerance."""


class NotUnitaryError(UBMError, ValueError):
    """A matrix (or frame) expected to be unitary is not, within tolerance."""


class DecompositionError(UBMError, ArithmeticError):
    """An eigendecomposition or factorization failed to converge."""


class GridError(UBMError, ValueError):
    """Invalid time grid."""


class DomainError(UBMError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class EstimationError(UBMError, ValueError):
    """Not enough samples (or batches) to form an estimate."""


class ConfigError(UBMError, ValueError):
    """Invalid scenario configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
