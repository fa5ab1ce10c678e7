"""Exception and warning types shared across the package."""


class ArrayfrontError(Exception):
    """Base class for all processing errors raised by this package."""


class WavError(ArrayfrontError):
    """Base class for WAV file defects."""


class MalformedHeaderError(WavError):
    """RIFF/WAVE header is missing, inconsistent, or unparseable."""


class UnsupportedEncodingError(WavError):
    """The file encodes samples in a format this package does not read."""


class TruncatedDataError(WavError):
    """The data chunk claims more bytes than the file contains."""


class SilentChannelError(ArrayfrontError):
    """Correlation is undefined because a signal carries no energy."""


class NoiseFloorError(ArrayfrontError):
    """SINR scoring found no no-speech frames to estimate a noise floor from."""


class UnknownSpeakerError(ArrayfrontError):
    """A requested speaker id does not occur in the segment annotation."""


class RttmParseError(ArrayfrontError):
    """An RTTM line could not be parsed."""

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SessionMismatchError(ArrayfrontError):
    """Reference and hypothesis annotations name different sessions."""


class UndefinedDerError(ArrayfrontError):
    """No reference speech remains after collar exclusion."""


class SceneSpecError(ArrayfrontError):
    """A simulation scene description is invalid.

    ``pointer`` is a JSON-pointer-style path to the offending field.
    """

    def __init__(self, pointer, message):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


class ConfigError(ArrayfrontError):
    """A pipeline configuration document is invalid."""


class ClippingWarning(UserWarning):
    """Samples were clamped while encoding to a fixed-point format."""
