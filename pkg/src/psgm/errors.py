"""Exception types raised across the package."""


class PSGMError(Exception):
    """Base class for all errors raised by psgm."""


class NotPositiveDefinite(PSGMError):
    """A symmetric factorization hit a non-positive (or negligible) pivot."""

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class DimensionMismatch(PSGMError, ValueError):
    pass


class NoConvergence(PSGMError):
    pass


class EmptyBatch(PSGMError, ValueError):
    pass


class DegenerateSamples(PSGMError):
    pass


class UnsupportedFamily(PSGMError, TypeError):
    pass


class WrongProcessTag(PSGMError, TypeError):
    pass


class SingularB(PSGMError):
    pass


class NotAdmissible(PSGMError):
    """Preconditioner fails the relative positive-definiteness requirement."""

    def __init__(self, message, min_quotient=None, witness=None):
        super().__init__(message)
        self.min_quotient = min_quotient
        self.witness = witness


class NonFiniteUpdate(PSGMError, FloatingPointError):
    pass


class ZeroOracle(PSGMError, ValueError):
    pass


class ConfigError(PSGMError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
