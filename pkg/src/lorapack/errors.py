"""Exception types shared across the package."""


class LorapackError(Exception):
    """Base class for all package errors."""


class SchemaError(LorapackError):
    """Tensor names/shapes violate an invariant or disagree between adapters."""


class AdapterFormatError(LorapackError):
    """An on-disk adapter file is malformed. ``field`` names the offending part."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class OracleError(LorapackError):
    """A loss oracle failed to produce a finite loss."""


class SearchError(LorapackError):
    """The clustering search aborted. Carries the iteration it failed at."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class ConfigError(LorapackError):
    """A run configuration is invalid or incomplete (usage error, exit code 2)."""
