"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class KgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(KgeError):
    """Invalid run configuration (bad flags, incompatible options)."""


class DataError(KgeError):
    """Dataset ingestion or consistency failure (file, line, id range)."""


class CheckpointError(KgeError):
    """Malformed, truncated, or incompatible checkpoint file."""


class DegenerateEmbeddingError(KgeError):
    """A zero-norm entity embedding reached the structure distance."""


class StageError(KgeError):
    """A stage-two-only operation was invoked during stage one."""


class DivergenceError(KgeError):
    """Training loss became non-finite or exceeded the guard threshold."""
