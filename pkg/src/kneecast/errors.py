"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class KneecastError(Exception):
    """Base class for all library errors."""

    exit_code = 1
    kind = "config"


class InvalidSpecError(KneecastError):
    """A filter or window specification violates its invariants."""


class ConfigError(KneecastError):
    """Bad run configuration, unknown scenario/group, or misuse of the API."""


class SchemaError(KneecastError):
    """Input file does not conform to the documented schema."""

    exit_code = 2
    kind = "data"


class DataError(KneecastError):
    """Input data is malformed (non-finite values, bad time column, ...)."""

    exit_code = 2
    kind = "data"


class ShapeError(KneecastError):
    """Array shape does not match the declared contract."""

    exit_code = 2
    kind = "data"


class SplitError(KneecastError):
    """A dataset split cannot be formed as requested."""


class GraftError(KneecastError):
    """Weight transfer between incompatible architectures."""


class MetricError(KneecastError):
    """Metrics are undefined for the given inputs (e.g. constant truth)."""

    exit_code = 2
    kind = "data"


class NumericError(KneecastError):
    """Non-finite loss or gradient encountered."""

    exit_code = 3
    kind = "numeric"


class ContractError(KneecastError):
    """An internal API precondition was violated."""


class CheckpointError(KneecastError):
    """Corrupt, truncated, or incompatible checkpoint file."""

    exit_code = 2
    kind = "data"


class UpgradeError(CheckpointError):
    """Checkpoint written by an unsupported format version."""
