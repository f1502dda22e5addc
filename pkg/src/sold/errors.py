"""Exception hierarchy shared by every module.

CLI exit codes are attached to the categories so ``run_command`` can map an
exception to a process status without a lookup table.
"""


class SoldError(Exception):
    exit_code = 1


class InvalidArgumentError(SoldError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgumentError):
    exit_code = 2


class DataError(SoldError):
    exit_code = 3


class ParseError(DataError):
    pass


class FilteredRecordError(DataError):
    pass


class NumericDomainError(SoldError, ArithmeticError):
    exit_code = 4


class DegenerateInputError(NumericDomainError):
    pass


class UndefinedMetricError(NumericDomainError):
    pass


class TooLargeError(InvalidArgumentError):
    pass


class TrainingDivergedError(SoldError):
    exit_code = 5


class PreconditionError(SoldError):
    exit_code = 3
