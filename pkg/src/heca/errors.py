"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes: validation problems (including
parse and infeasibility errors) exit 2, burn-in problems exit 3, resource
budget problems exit 4.
"""


class HecaError(Exception):
    """Base class for all package errors."""


class ValidationError(HecaError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """A file cell could not be parsed; message names row and column."""


class InfeasibleError(ValidationError):
    """Constraint set is empty (e.g. cardinality * epsilon > 1)."""


class BurnInError(HecaError):
    """Not enough realized history before the requested round.

    Carries ``first_feasible``, the earliest round index (0-based into the
    panel) at which the operation becomes feasible, or None when no round
    ever is.
    """

    def __init__(self, message, first_feasible=None):
        super().__init__(message)
        self.first_feasible = first_feasible


class ResourceBudgetError(HecaError):
    """Configured enumeration budget exceeded; use branch-and-bound."""
