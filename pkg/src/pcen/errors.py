"""Exception hierarchy shared by every stage of the pipeline."""


class PcenError(Exception):
    """Base class for all errors raised by this package."""


class DecodeError(PcenError, ValueError):
    """A WAV byte stream is malformed.

    The message names the RIFF chunk that failed to parse.
    """

    def __init__(self, chunk, message):
        self.chunk = chunk
        super().__init__(f"{chunk!r} chunk: {message}")


class UnsupportedFormatError(PcenError, ValueError):
    """A WAV file uses a codec or sample width we do not decode."""


class ConfigError(PcenError, ValueError):
    """Invalid frontend configuration (framing, FFT size, mel layout)."""


class EmptyOutputError(PcenError, ValueError):
    """An operation would produce zero frames or zero windows."""


class SilentAudioError(PcenError, ValueError):
    """Gain scaling was requested for a signal with zero RMS."""


class ParameterError(PcenError, ValueError):
    """A PCEN or smoother parameter is outside its valid range."""


class ShapeError(PcenError, ValueError):
    """Array shapes do not agree."""


class TrainingError(PcenError, RuntimeError):
    """Training cannot proceed (bad data, non-finite gradients, divergence)."""


class FormatError(PcenError, ValueError):
    """A serialized gram, parameter file, or manifest could not be parsed."""
