"""Exception hierarchy shared by all modules.

``ValidationError`` subclasses signal bad inputs (CLI exit code 1);
``RuntimeFailure`` subclasses signal numerical or training failures
(CLI exit code 2).
"""


class BodySetGanError(Exception):
    pass


class ValidationError(BodySetGanError):
    pass


class RuntimeFailure(BodySetGanError):
    pass


class MissingAsset(ValidationError):
    pass


class MalformedAsset(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class EmptyCaption(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class InvalidCount(ValidationError):
    pass


class EmptySet(ValidationError):
    pass


class CardinalityMismatch(ValidationError):
    pass


class MissingFile(ValidationError):
    pass


class ChecksumMismatch(ValidationError):
    pass


class MalformedRecord(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NonFiniteResult(RuntimeFailure):
    pass


class DivergenceDetected(RuntimeFailure):
    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
