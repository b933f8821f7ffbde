"""Exception types raised across the package."""


class DerCFRError(Exception):
    """Base class for all package errors."""


class ContractViolation(DerCFRError, ValueError):
    """Operand shapes or call preconditions do not hold."""


class NumericError(DerCFRError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigurationError(DerCFRError, ValueError):
    pass


class DegenerateInputError(DerCFRError, ValueError):
    """Empty groups, all-zero weights and similar inputs with no defined answer."""


class ParseError(DerCFRError, ValueError):
    pass


class SplitError(DerCFRError, ValueError):
    pass
