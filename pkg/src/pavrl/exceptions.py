"""Exception types raised across the package."""


class PavrlError(Exception):
    """Base class for all package errors."""


class ValidationError(PavrlError, ValueError):
    """Input value outside its documented domain."""


class ConfigurationError(PavrlError, ValueError):
    """Invalid or incomplete configuration (unfitted scaler, empty fleet, ...)."""


class SchemaError(PavrlError, ValueError):
    """Delimited input whose header does not match the documented schema."""


class SequencingError(PavrlError, RuntimeError):
    """Operation called out of order (e.g. ledger step index skipped)."""


class TrainingAborted(PavrlError, RuntimeError):
    """Training hit a non-finite value; ``checkpoint`` points at the last good state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
