"""Exception types shared across the package."""


class InvariantViolation(RuntimeError):
    """A runtime invariant of a simulation was broken beyond tolerance.

    Carries enough context (time, offending quantity) in the message to
    diagnose the run that produced it.
    """


class TruncationError(RuntimeError):
    """An image-series evaluation hit its term cap before converging."""
