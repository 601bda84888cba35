"""Exception hierarchy shared across the package."""


class KDASCError(Exception):
    """Base class for all package errors."""


class ShapeError(KDASCError, ValueError):
    pass


class ValidationError(KDASCError, ValueError):
    pass


class StateError(KDASCError, RuntimeError):
    """An operation was called in a state that does not support it."""


class WavFormatError(KDASCError, ValueError):
    pass


class UnsupportedCodecError(KDASCError, ValueError):
    pass


class EmptyInputError(KDASCError, ValueError):
    pass


class SchemaError(KDASCError, ValueError):
    pass


class DuplicateEntryError(SchemaError):
    pass


class ConfigError(KDASCError, ValueError):
    pass


class FilterbankError(KDASCError, ValueError):
    pass


class CheckpointError(KDASCError):
    pass


class IncompatibleVersionError(CheckpointError):
    pass


class CorruptFileError(CheckpointError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SpecMismatchError(CheckpointError):
    pass


class TrainingAborted(KDASCError, RuntimeError):
    def __init__(self, message, layer=None, step=None):
        super().__init__(f"{message} [layer={layer}, step={step}]")
        self.layer = layer
        self.step = step


class AuditError(KDASCError, ValueError):
    pass


class MissingEmbeddingError(KDASCError, KeyError):
    pass
