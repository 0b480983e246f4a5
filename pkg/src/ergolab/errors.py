"""Exception hierarchy shared by every module."""


class ErgolabError(Exception):
    pass


class UsageError(ErgolabError, ValueError):
    """Caller passed arguments that do not fit the operation."""


class DomainError(ErgolabError, ValueError):
    """Argument lies outside the mathematical domain (cut locus, empty measure, ...)."""


class PreconditionError(ErgolabError, ValueError):
    """A stated hypothesis of an estimator does not hold on the supplied data."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NumericError(ErgolabError, ArithmeticError):
    """An iterative numerical routine failed to converge."""
