"""Exception hierarchy.

Everything raised deliberately by the package derives from
:class:`RegimeTestError`.  The CLI maps :class:`DataError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class RegimeTestError(Exception):
    pass


class DataError(RegimeTestError, ValueError):
    """Input data, configuration or rule text is invalid."""


class NumericalError(RegimeTestError, ArithmeticError):
    """A numerical procedure failed or hit a degenerate case."""


# -- rule DSL -----------------------------------------------------------------

class RuleError(DataError):
    pass


class DslSyntaxError(RuleError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownVariable(RuleError):
    def __init__(self, name, stage=None):
        msg = f"unknown variable {name}"
        if stage is not None:
            msg += f" at stage {stage}"
        super().__init__(msg)
        self.name = name


class TreatmentCodeError(RuleError):
    pass


class MissingCatchAll(RuleError):
    pass


# -- data ---------------------------------------------------------------------

class CohortValidationError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ConfigError(DataError):
    pass


class EmptyGrid(DataError):
    pass


class PositivityViolation(DataError):
    pass


class EmptyStratum(DataError):
    pass


class DegenerateStratum(DataError):
    pass


# -- numerics -----------------------------------------------------------------

class NonConvergence(NumericalError):
    pass


class SeparationDetected(NumericalError):
    pass


class AllZeroMatrix(NumericalError):
    pass


class SingularParameterization(NumericalError):
    pass
