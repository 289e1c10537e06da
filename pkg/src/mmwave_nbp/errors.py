"""Exception types raised across the package."""


class MmwaveNbpError(Exception):
    """Base class for all package errors."""


class DegenerateGeometryError(MmwaveNbpError, ValueError):
    """Coincident points make an angle or distance undefined."""


class InsufficientPathsError(MmwaveNbpError, ValueError):
    """Fewer than three NLOS paths were supplied."""


class DegenerateWeightsError(MmwaveNbpError, ArithmeticError):
    """Importance weights are all zero, negative, non-finite or underflowed."""


class DegenerateOrientationError(MmwaveNbpError, ArithmeticError):
    """Circular mean requested for a set whose resultant vector vanishes."""


class SingularGeometryError(MmwaveNbpError, ArithmeticError):
    """A least-squares trial system is rank deficient."""


class EstimationFailedError(MmwaveNbpError, RuntimeError):
    """No trial orientation produced a usable least-squares solution."""


class ConfigError(MmwaveNbpError, ValueError):
    """Malformed or inconsistent experiment configuration."""
