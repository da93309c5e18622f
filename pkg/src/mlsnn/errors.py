"""Exception hierarchy. CLI exit codes are attached to each class."""


class SNNError(Exception):
    exit_code = 1


class ConfigError(SNNError, ValueError):
    exit_code = 2


class DataError(SNNError, ValueError):
    exit_code = 3


class NumericalError(SNNError, ArithmeticError):
    exit_code = 4


class InternalError(SNNError, RuntimeError):
    exit_code = 1
