"""Live-stream state: input framing plus the per-layer cache stack."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError, StreamStateError
from .model import CacheStack, ModelWeights, forward, forward_offline
from .tensor import DTYPE, Frame, as_frame

DEFAULT_CHUNK = 512
CHALLENGE_PUSH = 640  # 40 ms at 16 kHz


@dataclass(frozen=True)
class StreamConfig:
    chunk_len: int = DEFAULT_CHUNK
    sample_rate: int = 16000

    def check(self, num_levels: int) -> None:
        step = 2 ** num_levels
        if self.chunk_len < step or self.chunk_len % step:
            raise ConfigError(
                f"chunk_len {self.chunk_len} must be a positive multiple of {step}"
            )
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")


class StreamState:
    """All mutable state of one enhancement stream.

    Pushed samples accumulate in the framer; each complete ``chunk_len`` block
    runs one forward pass that reads and advances the caches.  Calls on one
    instance must be serialized; distinct instances may share ``model``.
    """

    def __init__(self, model: ModelWeights, cfg: StreamConfig | None = None):
        cfg = cfg or StreamConfig()
        cfg.check(model.config.num_levels)
        self.model = model
        self.cfg = cfg
        self.caches = CacheStack.for_model(model)
        self.channels = model.config.input_channels
        self.framer = np.zeros((self.channels, 0), dtype=DTYPE)
        self.emitted = 0
        self.poisoned = False

    @property
    def chunk_len(self) -> int:
        return self.cfg.chunk_len

    @property
    def pending(self) -> int:
        return self.framer.shape[1]

    def layer_caches(self):
        return [c for _, c in self.caches.ordered()]

    def push(self, samples: Frame) -> Frame:
        """Append samples and return enhanced output for every completed chunk."""
        if self.poisoned:
            raise StreamStateError("stream was flushed; call reset() before pushing again")
        samples = np.asarray(samples, dtype=DTYPE)
        if samples.ndim != 2 or samples.shape[0] != self.channels:
            raise ShapeError(f"expected ({self.channels}, n) samples, got shape {samples.shape}")
        buf = np.concatenate((self.framer, samples), axis=1)
        n_full = buf.shape[1] // self.chunk_len * self.chunk_len
        outputs = [
            forward(self.model, buf[:, s:s + self.chunk_len], self.caches)
            for s in range(0, n_full, self.chunk_len)
        ]
        self.framer = np.ascontiguousarray(buf[:, n_full:])
        if not outputs:
            return np.zeros((1, 0), dtype=DTYPE)
        out = np.concatenate(outputs, axis=1)
        self.emitted += out.shape[1]
        return out

    def flush(self, pad_value: float = 0.0) -> Frame:
        """Pad the framer to a full chunk, process it, and close the stream."""
        if self.poisoned:
            raise StreamStateError("stream already flushed")
        n = self.pending
        out = np.zeros((1, 0), dtype=DTYPE)
        if n:
            pad = np.full((self.channels, self.chunk_len - n), pad_value, dtype=DTYPE)
            block = np.concatenate((self.framer, pad), axis=1)
            out = np.ascontiguousarray(forward(self.model, block, self.caches)[:, :n])
            self.emitted += n
        self.framer = np.zeros((self.channels, 0), dtype=DTYPE)
        self.poisoned = True
        return out

    def reset(self) -> None:
        self.caches.reset()
        self.framer = np.zeros((self.channels, 0), dtype=DTYPE)
        self.emitted = 0
        self.poisoned = False

    def snapshot(self) -> bytes:
        """Deterministic little-endian dump: counters, framer, then caches in graph order."""
        parts = [
            struct.pack("<QIIB", self.emitted, self.channels, self.pending, int(self.poisoned)),
            self.framer.astype("<f4").tobytes(),
        ]
        parts.extend(c.data.astype("<f4").tobytes() for c in self.layer_caches())
        return b"".join(parts)


def new_stream(model: ModelWeights, cfg: StreamConfig | None = None) -> StreamState:
    return StreamState(model, cfg)


def stream_signal(model: ModelWeights, x: Frame, chunk_len: int = DEFAULT_CHUNK,
                  push_size: int | None = None) -> Frame:
    """Push ``x`` through a fresh stream in ``push_size`` pieces and flush."""
    x = as_frame(x, model.config.input_channels)
    state = StreamState(model, StreamConfig(chunk_len=chunk_len))
    step = push_size or chunk_len
    outs = [state.push(x[:, s:s + step]) for s in range(0, x.shape[1], step)]
    outs.append(state.flush())
    return np.concatenate(outs, axis=1)


def verify_streaming_equivalence(model: ModelWeights, x: Frame, chunk_len: int) -> float:
    """Max |offline - streamed| over the whole signal."""
    x = as_frame(x, model.config.input_channels)
    step = model.config.min_chunk
    if x.shape[1] == 0 or x.shape[1] % step:
        raise ContractError(f"input length {x.shape[1]} is not a positive multiple of {step}")
    StreamConfig(chunk_len=chunk_len).check(model.config.num_levels)
    offline = forward_offline(model, x)
    streamed = stream_signal(model, x, chunk_len)
    return float(np.max(np.abs(offline - streamed)))
