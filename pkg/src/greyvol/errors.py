"""Exception types mapped to CLI exit codes."""


class GreyvolError(Exception):
    """Base class for package errors."""


class ConfigError(GreyvolError):
    """Invalid study configuration or input file (CLI exit code 2)."""


class IncompatibilityError(GreyvolError):
    """Estimator/PSF/phantom combination violates a precondition (exit code 3)."""


class NumericalError(GreyvolError):
    """A numerical routine failed to reach its tolerance or a degeneracy was hit (exit code 4)."""


class WindowError(GreyvolError):
    """Observation window too small for the requested render (exit code 2)."""
