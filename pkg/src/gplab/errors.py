"""Exception types shared across the lab."""


class LabError(Exception):
    """Base class for all errors raised by gplab."""


class DimensionError(LabError, ValueError):
    """Vectors or matrices of incompatible dimension were combined."""


class LatticeError(LabError, ValueError):
    """A frequency does not lie on the expected rescaled lattice."""


class PreconditionError(LabError, ValueError):
    """An operation was called outside its admissible parameter range."""


class ThresholdError(PreconditionError):
    """A construction parameter exceeds its computed admissible threshold."""


class ResolutionError(LabError, ValueError):
    """A quadrature was requested with too few samples for the integrand's bandwidth."""


class IntegerRangeError(LabError, OverflowError):
    """Exact integer arithmetic would leave the supported machine-integer range."""


class ConfigError(LabError, ValueError):
    """Invalid experiment configuration (parse or range violation)."""
