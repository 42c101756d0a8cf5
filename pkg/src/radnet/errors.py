"""Exception hierarchy shared by every radnet module."""


class RadnetError(Exception):
    """Base class for all errors raised by radnet."""


class ShapeError(RadnetError, ValueError):
    pass


class ArgumentError(RadnetError, ValueError):
    pass


class StateError(RadnetError, RuntimeError):
    pass


class NumericError(RadnetError, ArithmeticError):
    pass


class SpecError(RadnetError, ValueError):
    pass


class CheckpointError(RadnetError):
    pass


class BadMagicError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownVersionError(CheckpointError):
    pass


class ManifestParseError(RadnetError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(RadnetError, ValueError):
    pass


class ImageLoadError(RadnetError, OSError):
    def __init__(self, path, reason):
        super().__init__(f"cannot load image {path}: {reason}")
        self.path = path
