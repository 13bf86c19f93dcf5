"""Library for exceptions raised by vadlstm."""


class VadException(Exception):
    """Base class for all vadlstm exceptions."""


class ConfigException(VadException):
    """Raised when a configuration value or combination is invalid."""


class ShapeException(VadException):
    """Raised when tensors handed to an operation have incompatible shapes."""


class DatasetIOException(VadException):
    """Raised when a dataset directory or frame file cannot be read or written."""


class DatasetValidationException(VadException):
    """Raised when a dataset on disk violates the expected layout."""


class RangeException(VadException):
    """Raised when an index or dimension lies outside its valid range."""


class AucUndefinedException(VadException):
    """Raised when an ROC is requested for single-class labels."""


class TrainingDivergedException(VadException):
    """Raised when the training loss becomes NaN or infinite."""


class CheckpointMismatchException(VadException):
    """Raised when a checkpoint belongs to a different model configuration."""


class OutputLockedException(VadException):
    """Raised when another command is writing the same output directory."""


class VerificationFailedException(VadException):
    """Raised when an oracle check of `vad verify` fails."""


class AcceptanceFailedException(VadException):
    """Raised when the multi-seed benchmark run misses a pass bar."""
