"""Exception hierarchy. Each class maps onto a CLI exit code."""


class SalauditError(Exception):
    exit_code = 1


class ConfigError(SalauditError):
    exit_code = 2


class FormatError(SalauditError):
    exit_code = 3


class ContractError(SalauditError, ValueError):
    """Raised when a caller violates an operation's preconditions."""

    exit_code = 4
