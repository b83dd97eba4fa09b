"""Exception hierarchy shared by all modules.

Exit-code mapping (used by the CLI): ConfigError -> 1, DataError and its
subclasses -> 2, anything else -> 3.
"""


class CombifeatError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CombifeatError):
    """Invalid configuration: bad thresholds, empty sets, unknown names."""


class DataError(CombifeatError):
    """Problem with the input data or derived artifacts."""


class SchemaError(DataError):
    """Declared schema does not match the data (missing column, bad name)."""


class ParseError(DataError):
    """A cell failed to parse (non-binary label, bad timestamp)."""


class TemplateError(DataError):
    """A feature template cannot be applied (fingerprint mismatch, bad record)."""


class MetricError(DataError):
    """A metric is undefined for the given inputs (single-class labels)."""
