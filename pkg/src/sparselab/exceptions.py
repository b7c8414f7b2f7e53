"""Shared exception types.

NumericOverflow is a control-flow signal, not a bug marker: the trial
runner catches it and classifies the trial as infeasible.
"""


class ConfigError(ValueError):
    """Inconsistent shapes, bounds, or configuration values."""


class NumericOverflow(ArithmeticError):
    """A non-finite value appeared during forward/backward/update."""


class StaleCacheError(RuntimeError):
    """A backward pass was fed a cache from a different forward pass."""


class IdxFormatError(ValueError):
    """Malformed IDX file; message carries the failing byte offset."""


class InsufficientDataError(ValueError):
    """Too few points to fit (fewer than 2 distinct batch sizes)."""


class DegenerateStepError(ArithmeticError):
    """Zero parameter displacement; the smoothness quotient is undefined."""
