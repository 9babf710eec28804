"""Exception hierarchy shared across the pipeline."""


class RagVqaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RagVqaError):
    """Invalid or out-of-range configuration value."""


class DatasetError(RagVqaError):
    """Annotation files missing, malformed, or violating invariants."""


class ValidationError(RagVqaError, ValueError):
    """An operation was called with inputs violating its contract."""


class BackendError(RagVqaError):
    """A model backend call failed."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class ProtocolError(BackendError):
    """A wire message did not conform to the v1 protocol."""


class RetrievalError(RagVqaError):
    """Knowledge fetching or scoring failed."""


class MalformedPayloadError(RetrievalError):
    """A knowledge endpoint returned a payload we cannot parse."""


class NotFoundError(RetrievalError):
    """A requested knowledge page does not exist."""

    def __init__(self, title: str):
        super().__init__(f"page not found: {title!r}")
        self.title = title


class StageFailure(RagVqaError):
    """Wraps a per-sample failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, sample_id: str, cause: Exception):
        super().__init__(f"stage {stage} failed for sample {sample_id}: {cause}")
        self.stage = stage
        self.sample_id = sample_id
        self.cause = cause
