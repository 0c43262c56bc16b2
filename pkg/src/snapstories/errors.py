"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps each family onto an exit code: configuration problems exit 2,
data problems exit 3 and failures of external services (LLM endpoint,
checkpoint resolution) exit 4.
"""


class SnapError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(SnapError):
    exit_code = 2


class DataError(SnapError):
    exit_code = 3


class MalformedInputError(DataError):
    """A log file could not be parsed."""


class SchemaError(DataError):
    """Mandatory fields are missing or attributes are referenced wrongly."""


class EmptyLogError(DataError):
    pass


class DegenerateInputError(DataError):
    """Input admits no meaningful answer (single-class target, all-zero differences)."""


class PromptBuildError(DataError):
    pass


class TemplateValidationError(DataError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("template failed validation: " + "; ".join(self.violations))


class ModelFormatError(DataError):
    """A persisted model is corrupt or was written by an incompatible version."""


class ExternalServiceError(SnapError):
    exit_code = 4


class TransportError(ExternalServiceError):
    def __init__(self, message, attempts=1):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempt(s))")


class CheckpointNotFoundError(ExternalServiceError):
    pass
