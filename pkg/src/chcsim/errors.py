"""Shared exception types for in-run checks."""


class CheckFailure(RuntimeError):
    """A quantitative in-run assertion (contraction, bound, oracle) failed."""
