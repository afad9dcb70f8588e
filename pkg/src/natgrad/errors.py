"""Exception types raised across the package."""


class NatgradError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionMismatchError(NatgradError):
    """Operand shapes are not conformable."""


class SingularMatrixError(NatgradError):
    """A pivot underflowed the singularity threshold during elimination."""


class DivergenceError(NatgradError):
    """Newton iteration residual grew past 10x its initial value."""


class ZeroMatrixError(NatgradError):
    """Spectral norm requested for an all-zero matrix."""


class StaleCacheError(NatgradError):
    """Backward pass called with a cache from a different forward pass."""


class EmptyBatchError(NatgradError):
    """Factor estimation requested on a zero-sample cache."""


class InversionFailedError(NatgradError):
    """Neither Newton iteration nor exact elimination produced an inverse."""


class StaleFactorsError(NatgradError):
    """Fisher factor inverses older than the configured skip frequency."""


class PerturbationTooLargeError(NatgradError):
    """Damping change too large for the first-order inverse update."""


class NonFiniteLossError(NatgradError):
    """Training loss left the finite range; the run must abort."""


class SingularInnovationError(NatgradError):
    """The innovation system in a Kalman gain solve is singular."""


class CovarianceCollapseError(NatgradError):
    """A posterior variance dropped more than 10x below the positivity floor."""


class TooLargeError(NatgradError):
    """Brute-force oracle requested beyond its dimension cap."""


class GramSingularError(NatgradError):
    """Initial Gram matrix is numerically singular; experiment invalid."""


class CsvParseError(NatgradError):
    """Malformed CSV content; message carries the offending line number."""


class SchemaMismatchError(NatgradError):
    """CSV header does not provide the columns the schema requires."""
