"""Shared exception types."""


class InputError(ValueError):
    """Invalid user input: bad domain values, misaligned series, unknown columns."""


class EstimationError(RuntimeError):
    """An estimation step failed (infeasible start, singular matrices, non-convergence)."""


class DegenerateInferenceWarning(UserWarning):
    """A test was computed on a degenerate configuration (zero variance, constant hits, ...)."""
