"""Exception hierarchy shared by every module of the engine."""


class TCWUError(Exception):
    """Base class for all engine errors."""


class ConfigError(TCWUError, ValueError):
    """Invalid model/stream configuration or parameter shapes."""


class ShapeError(TCWUError, ValueError):
    """Tensor shapes that do not fit together."""


class ContractError(TCWUError, ValueError):
    """An input violates a length/geometry contract (odd length, bad chunk size, ...)."""


class DataError(TCWUError, ValueError):
    """Numerically invalid data (negative variance, non-finite weights, ...)."""


class StreamStateError(TCWUError, RuntimeError):
    """Operation not permitted in the current stream state (e.g. push after flush)."""


class WeightFileError(TCWUError):
    """A TCWU weight container could not be parsed."""


class WavError(TCWUError):
    """Base class for WAV decoding problems."""


class MalformedWavError(WavError):
    """The RIFF/WAVE structure is broken."""


class UnsupportedEncodingError(WavError):
    """The file is valid RIFF but uses an encoding we do not decode."""


class TruncatedWavError(WavError):
    """The data chunk ends before its declared size."""


class DegenerateInputError(TCWUError, ValueError):
    """A metric is undefined for the given input (silent signal, zero norm)."""
