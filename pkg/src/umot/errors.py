"""Exception hierarchy shared by all modules."""


class UMOTError(Exception):
    """Base class for errors raised by this package."""


class InputError(UMOTError, ValueError):
    """Malformed or inconsistent user input."""


class TreeError(InputError):
    """A graph failed tree validation.

    ``violations`` lists every violated invariant, not only the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid tree: " + "; ".join(self.violations))


class NumericalError(UMOTError, FloatingPointError):
    """Non-finite or underflowed intermediate during an iteration."""


class StaleMessageError(UMOTError, AssertionError):
    """A message was consumed after a potential it depends on changed."""
