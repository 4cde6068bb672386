class FlowgateError(Exception):
    """Root of every error raised by flowgate code."""


class InvariantViolation(FlowgateError):
    """A value was built or serialized in a state its type forbids."""
