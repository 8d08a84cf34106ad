"""Exception hierarchy shared across the toolkit.

Each class maps to one CLI exit code so commands can fail with a stable,
scriptable status.
"""


class LeadRiskError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(LeadRiskError):
    """Bad or incomplete run configuration (CLI exit 2)."""


class LeakageError(LeadRiskError):
    """Internal cross-validation assertion failed (CLI exit 3)."""


class DataError(LeadRiskError):
    """Input data violates a contract (CLI exit 4)."""


class ModelFormatError(LeadRiskError):
    """Model document is corrupted or incompatible (CLI exit 5)."""


class MissingArtifactError(LeadRiskError):
    """Expected result files are absent (CLI exit 6)."""
