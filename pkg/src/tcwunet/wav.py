"""RIFF/WAVE reading and writing for PCM-16 and IEEE float-32 audio.

PCM-16 samples decode as ``s / 32768`` and encode as ``round(x * 32768)``
clipped to the int16 range, so a decoded PCM-16 clip re-encodes to the same
integers.  Float-32 is stored verbatim.  ``WAVE_FORMAT_EXTENSIBLE`` headers
are accepted on read; files are written with the plain format tags.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MalformedWavError, TruncatedWavError, UnsupportedEncodingError
from .tensor import DTYPE, Frame, as_frame

FORMAT_PCM = 0x0001
FORMAT_FLOAT = 0x0003
FORMAT_EXTENSIBLE = 0xFFFE

ENCODINGS = ("pcm16", "float32")


@dataclass
class AudioClip:
    sample_rate: int
    frame: Frame  # (channels, length) float32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame = as_frame(self.frame)
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.frame)):
            raise DataError("audio contains non-finite samples")

    @property
    def channels(self) -> int:
        return self.frame.shape[0]

    @property
    def length(self) -> int:
        return self.frame.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


def _chunks(buf: bytes):
    pos = 12
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = pos + 8
        yield cid, body, size
        pos = body + size + (size & 1)


def decode_wav(buf: bytes) -> AudioClip:
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise MalformedWavError("not a RIFF/WAVE file")
    fmt = None
    data = None
    for cid, body, size in _chunks(buf):
        if cid == b"fmt ":
            if size < 16 or body + 16 > len(buf):
                raise MalformedWavError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", buf, body)
            if fmt[0] == FORMAT_EXTENSIBLE:
                if size < 40 or body + 40 > len(buf):
                    raise MalformedWavError("extensible fmt chunk too short")
                sub = struct.unpack_from("<H", buf, body + 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError("data chunk precedes fmt chunk")
            if body + size > len(buf):
                raise TruncatedWavError(
                    f"data chunk declares {size} bytes, only {len(buf) - body} present"
                )
            data = buf[body:body + size]
            break
    if fmt is None:
        raise MalformedWavError("missing fmt chunk")
    if data is None:
        raise MalformedWavError("missing data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedWavError(f"bad header fields channels={channels} rate={rate}")
    if tag == FORMAT_PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == FORMAT_FLOAT and bits == 32:
        dtype, scale = "<f4", None
    else:
        raise UnsupportedEncodingError(f"format tag {tag:#06x} with {bits} bits per sample")
    width = bits // 8
    if block_align != channels * width:
        raise MalformedWavError(f"block_align {block_align} != channels * {width}")
    if len(data) % block_align:
        raise TruncatedWavError("data chunk ends mid-frame")
    samples = np.frombuffer(data, dtype=dtype).reshape(-1, channels).T
    if scale is None:
        frame = samples.astype(DTYPE)
    else:
        frame = (samples.astype(np.float64) * scale).astype(DTYPE)
    return AudioClip(rate, np.ascontiguousarray(frame))


def encode_wav(clip: AudioClip, encoding: str = "float32") -> bytes:
    if encoding not in ENCODINGS:
        raise UnsupportedEncodingError(f"cannot write encoding {encoding!r}")
    interleaved = np.ascontiguousarray(clip.frame.T)
    if encoding == "pcm16":
        q = np.clip(np.round(interleaved.astype(np.float64) * 32768.0), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        tag, width = FORMAT_PCM, 2
    else:
        payload = interleaved.astype("<f4").tobytes()
        tag, width = FORMAT_FLOAT, 4
    ch = clip.channels
    fmt = struct.pack("<HHIIHH", tag, ch, clip.sample_rate, clip.sample_rate * ch * width,
                      ch * width, 8 * width)
    chunks = [b"fmt ", struct.pack("<I", len(fmt)), fmt]
    if tag == FORMAT_FLOAT:
        chunks += [b"fact", struct.pack("<II", 4, clip.length)]
    chunks += [b"data", struct.pack("<I", len(payload)), payload]
    if len(payload) & 1:
        chunks.append(b"\x00")
    body = b"WAVE" + b"".join(chunks)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path) -> AudioClip:
    return decode_wav(Path(path).read_bytes())


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    Path(path).write_bytes(encode_wav(clip, encoding))
