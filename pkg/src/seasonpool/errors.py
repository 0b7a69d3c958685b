"""Exception hierarchy.

Every error carries a short ``category`` string; the command line prints it
as the first token of its one-line error report so scripts can match on it.
"""


class SeasonPoolError(Exception):
    category = "error"


class ParseError(SeasonPoolError, ValueError):
    category = "parse"


class ConfigurationError(SeasonPoolError, ValueError):
    category = "config"


class DomainError(SeasonPoolError, ValueError):
    category = "domain"


class DataError(SeasonPoolError, ValueError):
    category = "data"


class AlignmentError(DataError):
    category = "alignment"


class PlanningError(SeasonPoolError, ValueError):
    category = "planning"


class InitializationError(SeasonPoolError, RuntimeError):
    category = "init"


class CurvatureError(SeasonPoolError, RuntimeError):
    category = "curvature"


class NumericalError(SeasonPoolError, ArithmeticError):
    category = "numerical"


class ConvergenceError(SeasonPoolError, RuntimeError):
    category = "convergence"
