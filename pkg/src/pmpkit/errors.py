"""Exception hierarchy shared by all pmpkit modules."""


class PMPKitError(Exception):
    """Base class for every error raised by pmpkit."""


# --- parsing / configuration -------------------------------------------------


class ParseError(PMPKitError):
    """An expression could not be turned into an AST."""

    def __init__(self, message, offset=None, token=None):
        self.offset = offset
        self.token = token
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class ExpressionSyntaxError(ParseError):
    pass


class UnknownIdentifier(ParseError):
    pass


class IndexOutOfRange(ParseError):
    pass


class ConfigError(PMPKitError):
    pass


class MissingField(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class ConstraintUsesControl(ConfigError):
    pass


class GridMismatch(PMPKitError):
    """Two grids that must be nested are not."""


# --- numerics ----------------------------------------------------------------


class EvaluationError(PMPKitError):
    pass


class DomainError(EvaluationError):
    """log of a nonpositive number, sqrt of a negative number, etc."""


class NonFiniteValue(EvaluationError):
    pass


class SolverError(PMPKitError):
    pass


class BlowUp(SolverError):
    """The forward solution left every bounded set before the horizon."""

    def __init__(self, t, norm=None):
        self.t = float(t)
        self.norm = norm
        msg = f"solution blew up at t={self.t:.6g}"
        if norm is not None:
            msg += f" (|q|_inf={norm:.3g})"
        super().__init__(msg)


class SingularTransition(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class RangeError(PMPKitError, ValueError):
    pass


class BoundNotAchieved(SolverError):
    pass


class UnsupportedOmega(PMPKitError):
    pass


class BudgetExhausted(SolverError):
    pass


class DegenerateState(SolverError):
    pass
