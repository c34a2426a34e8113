"""Exception hierarchy shared across the library.

The CLI maps these onto exit codes: configuration problems -> 1,
numerical/estimation failures -> 2, I/O problems -> 3.
"""


class SimOfdmError(Exception):
    """Base class for all library errors."""


class ConfigurationError(SimOfdmError):
    """A config value (or combination of values) is invalid."""


class InputError(SimOfdmError):
    """An operation received data violating its contract (shape, length...)."""


class DecodeError(SimOfdmError):
    """A frame cannot be inverted back to bits (support not in codebook...)."""


class EstimationError(SimOfdmError):
    """An estimator cannot produce a usable result (rank deficiency...)."""


class NumericalError(SimOfdmError):
    """A numerical operation failed (near-singular matrix...)."""
