"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (config 2, data 3, solver 4), so code
should raise the most specific class that applies.
"""


class CrwError(Exception):
    """Base class for all package errors."""


class ConfigError(CrwError):
    """Invalid configuration, arguments, or model parameters."""


class DataError(CrwError):
    """Malformed or out-of-range input data."""


class CapacityError(ConfigError):
    """A mode was asked to handle a problem size beyond its design cap."""


class InvalidModelError(ConfigError):
    """A rank model whose parameters are mutually inconsistent."""


class DegenerateInputError(DataError):
    """Inputs that make the requested estimate undefined (e.g. all-zero effects)."""


class SolverError(CrwError):
    """A root-finding or normalization loop failed to converge."""

    def __init__(self, message, *, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace or []
