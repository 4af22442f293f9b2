class VoiceAugError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormatError(VoiceAugError):
    """WAV file uses a codec, sample format or channel layout we do not read."""


class CorruptHeaderError(VoiceAugError):
    """WAV file header cannot be parsed."""


class IoFailureError(VoiceAugError):
    """Reading or writing a file failed at the OS level."""


class EmptyBufferError(VoiceAugError):
    """Operation needs at least one sample."""


class TooShortError(VoiceAugError):
    """Audio is shorter than one analysis window."""


class FrameTooShortError(VoiceAugError):
    """Frame does not span two periods of the given f0."""


class EmptyAudioError(VoiceAugError):
    """Transformation called on an empty buffer."""


class InvalidParamsError(VoiceAugError):
    """Transformation parameters are outside their documented ranges."""


class InvalidShiftError(VoiceAugError):
    """Pitch shift outside the supported range."""


class InvalidContourError(VoiceAugError):
    """F0 contour violates its length or range invariants."""


class SilentInputError(VoiceAugError):
    """Clean signal or noise has zero RMS."""


class SampleRateMismatchError(VoiceAugError):
    """Two buffers that must share a sample rate do not."""


class MissingNoiseBankError(VoiceAugError):
    """Scheme needs a noise bank but none was given."""


class UninitializedStateError(VoiceAugError):
    """Streaming perturbation called without an initialized state."""


class EmptyDirectoryError(VoiceAugError):
    """Directory holds no WAV files."""


class UnreadableFileError(VoiceAugError):
    """A file listed for a manifest or noise bank cannot be read."""


class TargetExceedsTotalError(VoiceAugError):
    """Requested subset is longer than the available training audio."""


class WorkloadFailureError(VoiceAugError):
    """Benchmarked workload raised during timing."""
