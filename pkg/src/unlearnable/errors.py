"""Exception hierarchy shared by every module.

Each error class carries the CLI exit code it maps to, so the front end can
translate failures without a lookup table.
"""


class UnlearnableError(Exception):
    exit_code = 1


class ConfigError(UnlearnableError, ValueError):
    """Invalid configuration. ``problems`` lists every offending key."""

    exit_code = 2

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class InputContractError(UnlearnableError, ValueError):
    exit_code = 3


class ParseError(InputContractError):
    """Malformed external file; ``location`` is a byte offset or line number."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class ProvenanceError(InputContractError):
    pass


class CorruptionError(InputContractError):
    pass


class VersionError(InputContractError):
    pass


class NumericContractError(UnlearnableError, ArithmeticError):
    exit_code = 4
