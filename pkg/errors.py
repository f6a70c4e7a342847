"""
Exception types shared by the simulator modules. Only levisim.py maps them to exit codes.
"""


class LevisimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(LevisimError):
    """Config file could not be parsed or failed validation."""


class NumericError(LevisimError):
    """A computation produced an unusable result (non-finite values, failed factorization...)."""


class SingularityError(NumericError):
    """Euler-angle coordinate singularity hit (|sin beta| below the guard band)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class QuadratureError(NumericError):
    """Adaptive or fixed-grid quadrature did not reach the requested accuracy."""


class TraceFormatError(LevisimError):
    """Trace file header is corrupt or was written by an incompatible version."""
