"""Exception types shared across the package."""


class VotingQError(Exception):
    """Base class for all package errors."""


class DomainError(VotingQError, ValueError):
    """An argument lies outside the domain of an operation (bad index, size, ...)."""


class ConfigurationError(VotingQError, ValueError):
    """A rule, agent or experiment is configured inconsistently.

    ``errors`` holds ``(field_path, message)`` pairs when several problems were
    found at once, e.g. while validating an experiment config file.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors or [])


class CapacityError(VotingQError, ValueError):
    """An exhaustive computation was refused because the instance is too large."""


class UsageError(VotingQError, RuntimeError):
    """An object was used out of protocol, e.g. stepping a finished episode."""


class ParseError(VotingQError, ValueError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)
        self.path = path
        self.line = line
