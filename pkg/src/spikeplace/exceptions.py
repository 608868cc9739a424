"""Exception hierarchy; the CLI maps each class onto an exit code."""


class SpikePlaceError(Exception):
    """Base class for all package errors."""


class ConfigError(SpikePlaceError, ValueError):
    """Invalid parameters or configuration (exit code 2)."""


class DataError(SpikePlaceError, ValueError):
    """Missing, corrupt or mismatched input data (exit code 3)."""


class ArtifactError(DataError):
    """A persisted artifact failed a version, size or checksum check."""


class InvariantError(SpikePlaceError, RuntimeError):
    """An internal numerical invariant was violated (exit code 4)."""
