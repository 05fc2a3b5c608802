"""Exception types shared across the package."""


class PreDpoError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PreDpoError, ValueError):
    """An argument violates an operation's precondition."""


class IncompatibleSnapshotError(PreDpoError):
    """A snapshot does not match the architecture it is restored into."""


class ConfigError(PreDpoError, ValueError):
    """A configuration is inconsistent. ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DatasetParseError(PreDpoError, ValueError):
    """A dataset file line could not be parsed."""


class ValidationError(PreDpoError, ValueError):
    """A preference record violates a data invariant."""


class EmptyDatasetError(InvalidInputError):
    """An operation that needs at least one record received none."""
