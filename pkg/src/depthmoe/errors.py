"""Exception taxonomy. Every module raises these rather than bare ValueError
so the CLI can map failures to diagnostics and exit codes."""


class DepthMoeError(Exception):
    """Base class for all package errors."""


class ShapeError(DepthMoeError):
    """Operand shapes are incompatible."""


class NumericError(DepthMoeError):
    """Non-finite or out-of-domain numeric input."""


class LabelError(DepthMoeError):
    """Class index or routing label out of range / unknown."""


class ContractError(DepthMoeError):
    """An operation precondition was violated by the caller."""


class ConfigError(DepthMoeError):
    """Invalid configuration value or combination."""


class FeatureExtractionError(DepthMoeError):
    """Malformed token sequence (e.g., unbalanced nest markers)."""


class CalibrationError(DepthMoeError):
    """A component that requires calibration was used before calibrating."""


class DataError(DepthMoeError):
    """Corpus or batch is missing required fields for the requested stage."""


class TraceError(DepthMoeError):
    """Chain trace is incomplete or inconsistent."""


class CheckpointError(DepthMoeError):
    """Checkpoint file is malformed or fails its checksum."""
