"""Exception types raised across the package."""


class PhonemedaError(Exception):
    """Base class for all package errors."""


# audio_io
class MalformedContainer(PhonemedaError, ValueError):
    pass


class UnsupportedFormat(PhonemedaError, ValueError):
    pass


class NonIntegerFactor(PhonemedaError, ValueError):
    pass


class EmptyClip(PhonemedaError, ValueError):
    pass


# dsp
class NonPowerOfTwoLength(PhonemedaError, ValueError):
    pass


class ClipTooShort(PhonemedaError, ValueError):
    pass


class InvalidRange(PhonemedaError, ValueError):
    pass


class DimensionMismatch(PhonemedaError, ValueError):
    pass


# vocab / dataset
class SequenceTooLong(PhonemedaError, ValueError):
    pass


class ParseError(PhonemedaError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingAudioFile(PhonemedaError, FileNotFoundError):
    pass


class InvalidConfig(PhonemedaError, ValueError):
    pass


class DatasetTooSmall(PhonemedaError, ValueError):
    pass


# autodiff
class ShapeMismatch(PhonemedaError, ValueError):
    pass


class NonScalarLoss(PhonemedaError, ValueError):
    pass


# training
class EmptyTrainingSet(PhonemedaError, ValueError):
    pass


class NonOneHotTarget(PhonemedaError, ValueError):
    pass


class MissingGradient(PhonemedaError, ValueError):
    pass


# metrics
class EmptyGroundTruth(PhonemedaError, ValueError):
    pass


class TokenOutOfRange(PhonemedaError, ValueError):
    pass


# model files
class BadModelFile(PhonemedaError, ValueError):
    """Any failure to read a serialized model."""


class BadMagic(BadModelFile):
    pass


class UnsupportedVersion(BadModelFile):
    pass


class TruncatedFile(BadModelFile):
    pass


class ChecksumMismatch(BadModelFile):
    pass


class StructuralMismatch(PhonemedaError, ValueError):
    """Two models cannot be compared because their shapes differ."""
