"""Exception hierarchy shared by every module.

The CLI maps ConfigurationError to exit status 2 and every NumericError
to exit status 3. Library code raises, it never exits.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class WvaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(WvaError):
    """Invalid parameters or an experiment file that fails validation.

    Attributes:
        field_errors: list of (field path, message) tuples, empty when the
            problem is not tied to a single field.
    """

    def __init__(self, message, field_errors=None):
        super().__init__(message)
        self.field_errors = list(field_errors or [])


class NumericError(WvaError):
    """Base class for failures during a computation."""


class ContractViolation(NumericError):
    """A caller broke an operation's precondition."""


class InvalidStateError(NumericError):
    """A motional state leaked population into the truncation guard."""


class AccuracyError(NumericError):
    """A sampling grid is too coarse or too narrow for the state."""


class UndefinedWeakValueError(NumericError):
    """Pre- and postselected states are orthogonal."""


class UndefinedStateError(NumericError):
    """The postselected pointer state has zero norm."""


class UndefinedShiftError(NumericError):
    """A closed-form pointer shift has a vanishing denominator."""


class ImpossibleOutcomeError(NumericError):
    """Projection onto an outcome that has (numerically) zero probability."""


class EmptyPostselectionError(NumericError):
    """Heralding kept no shots.

    Attributes:
        kept: shots heralded as |up> (always 0).
        discarded: shots heralded as |down>.
    """

    def __init__(self, message, kept=0, discarded=0):
        super().__init__(message)
        self.kept = kept
        self.discarded = discarded


class FitError(NumericError):
    """A least-squares fit is degenerate."""


class ExtractionError(NumericError):
    """A moment could not be extracted from a signal set."""


class InfeasibleBoundError(NumericError):
    """No distribution on the grid satisfies the kinetic bound."""


class ConvergenceError(NumericError):
    """The reconstruction solver ran out of iterations.

    Attributes:
        best: the best ReconstructionResult found before giving up.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def exit_code_for(exc):
    """Return the process exit status for an exception raised by a run."""
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return 1
