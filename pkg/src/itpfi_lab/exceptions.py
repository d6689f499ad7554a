"""Exception hierarchy.

Precondition failures subclass :class:`ValueError` so callers that only care
about "bad input" can catch one thing; numerical exhaustion is an
:class:`ArithmeticError`.
"""


class PrecisionExhausted(ArithmeticError):
    """The working-precision ceiling was reached before the requested error bound."""


class PreconditionError(ValueError):
    """An operation was called outside its documented domain."""


class WindowTooSmall(PreconditionError):
    """The analysis horizon does not extend past the starting index j0."""


class TargetOutsideU(PreconditionError):
    """The chain endpoint x + g does not lie in the sup-norm ball U."""


class LengthMismatch(PreconditionError):
    """A word is longer than the product measure it is evaluated against."""


class OverflowOnOrbit(ArithmeticError):
    """An odometer orbit segment passes through the all-ones word."""


class BlockOverflow(PreconditionError):
    """A requested measure length exceeds the configured coordinate cap."""
