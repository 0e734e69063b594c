"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
these rather than bare ValueError/RuntimeError for contract violations.
"""


class InvalidInputError(ValueError):
    """Arguments violate a documented precondition (shapes, ranges, ids)."""


class UnsupportedDimensionError(InvalidInputError):
    """Requested parameter dimension exceeds what the routine supports."""


class InvalidStateError(RuntimeError):
    """Operation applied to data whose internal state makes it meaningless."""


class CapacityError(RuntimeError):
    """Exact enumeration would exceed the configured set-count cap."""


class NumericalDegeneracyError(RuntimeError):
    """A matrix factorization or draw collapsed (non-PD scale, NaN state)."""


class InsufficientDrawsError(InvalidInputError):
    """Too few posterior draws to summarize meaningfully."""


class ConfigError(ValueError):
    """Run configuration is missing keys, has bad values, or is inconsistent."""
