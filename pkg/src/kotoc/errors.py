"""Exception types shared across the package."""


class KotocError(Exception):
    """Base class for all package errors."""


class SizeLimitError(KotocError):
    """A configured size cap (partition count, memory budget, dimension) was exceeded."""


class DimensionError(KotocError, ValueError):
    """Inputs have incompatible sizes."""


class OrderError(KotocError, ValueError):
    """A lattice-order precondition (e.g. sigma <= nu) does not hold."""


class DomainError(KotocError, ValueError):
    """An argument lies outside the domain of an operation."""


class ValidationError(KotocError, ValueError):
    """A matrix failed a unitarity/Hermiticity/format check."""

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class DegeneracyError(KotocError):
    """A spectral quantity is not uniquely defined (degenerate or ambiguous modes)."""
