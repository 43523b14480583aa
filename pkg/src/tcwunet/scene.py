"""Synthetic multi-microphone scenes: ``mixture = rir * clean + noise``.

Everything is seeded, so the same arguments always give the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ContractError, DegenerateInputError, ShapeError
from .tensor import DTYPE
from .wav import AudioClip

PEAK_TARGET = 0.9


@dataclass
class Rir:
    taps: list[np.ndarray]  # one impulse response per channel

    def __post_init__(self):
        self.taps = [np.asarray(t, dtype=np.float64).ravel() for t in self.taps]
        if not self.taps or any(t.size == 0 for t in self.taps):
            raise ContractError("every RIR channel needs at least one tap")

    @property
    def channels(self) -> int:
        return len(self.taps)


def convolve_rir(dry: AudioClip, rir: Rir) -> AudioClip:
    """Causal convolution of each channel with its RIR, truncated to the dry length.

    A mono dry signal is broadcast to every RIR channel.
    """
    if dry.channels not in (1, rir.channels):
        raise ShapeError(f"dry signal has {dry.channels} channels, RIR has {rir.channels}")
    n = dry.length
    longest = max(t.size for t in rir.taps)
    h = np.zeros((rir.channels, longest))
    for c, taps in enumerate(rir.taps):
        h[c, :taps.size] = taps
    x = dry.frame.astype(np.float64)
    if n == 0:
        wet = np.zeros((rir.channels, 0))
    else:
        wet = fftconvolve(x, h, axes=1)[:, :n]
    return AudioClip(dry.sample_rate, wet.astype(DTYPE), dict(dry.meta))


def signal_power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0


def measured_snr_db(signal, noise) -> float:
    return 10.0 * np.log10(signal_power(signal) / signal_power(noise))


def mix_at_snr(reverberant: AudioClip, noise: AudioClip, snr_db: float,
               seed: int | np.random.Generator | None = 0) -> AudioClip:
    """Add ``noise`` to ``reverberant`` scaled to the requested SNR.

    Noise longer than the signal is cropped at a seeded random offset; a
    mono noise clip is shared by all channels.  Power is averaged over all
    channels and samples.
    """
    if reverberant.sample_rate != noise.sample_rate:
        raise ContractError(
            f"sample rates differ: {reverberant.sample_rate} vs {noise.sample_rate}"
        )
    if noise.channels not in (1, reverberant.channels):
        raise ShapeError(f"noise has {noise.channels} channels, signal {reverberant.channels}")
    n = reverberant.length
    if noise.length < n:
        raise ContractError(f"noise ({noise.length} samples) shorter than signal ({n})")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, noise.length - n + 1))
    s = reverberant.frame.astype(np.float64)
    v = np.broadcast_to(noise.frame[:, offset:offset + n].astype(np.float64), s.shape)
    ps, pn = signal_power(s), signal_power(v)
    if ps == 0.0 or pn == 0.0:
        raise DegenerateInputError("SNR is undefined for a silent signal or silent noise")
    gain = np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    meta = dict(reverberant.meta, snr_db=float(snr_db), noise_gain=float(gain),
                noise_offset=offset)
    return AudioClip(reverberant.sample_rate, (s + gain * v).astype(DTYPE), meta)


def speech_like(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    """Harmonic source with a wandering pitch, gated by syllable-sized bursts."""
    t = np.arange(n) / sample_rate
    # pitch contour: slow random walk between ~90 and ~240 Hz
    knots = rng.uniform(90.0, 240.0, size=max(2, int(n / sample_rate * 3) + 2))
    f0 = np.interp(t, np.linspace(0.0, t[-1] if n > 1 else 1.0, knots.size), knots)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    x = np.zeros(n)
    tilt = rng.uniform(0.6, 1.2)
    formant = rng.uniform(400.0, 900.0)
    for h in range(1, 30):
        amp = h ** -tilt * (1.0 + 2.0 * np.exp(-((h * 160.0 - formant) / 300.0) ** 2))
        x += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi)) * (h * f0 < 0.45 * sample_rate)
    env = np.zeros(n)
    pos = int(rng.integers(0, sample_rate // 10))
    while pos < n:
        length = int(rng.uniform(0.08, 0.3) * sample_rate)
        seg = np.hanning(length + 2)[1:-1] * rng.uniform(0.4, 1.0)
        env[pos:pos + length] = seg[: max(0, min(length, n - pos))]
        pos += length + int(rng.uniform(0.02, 0.25) * sample_rate)
    return x * env


def random_rir(rng: np.random.Generator, sample_rate: int, channel: int,
               rt60: float = 0.3, n_reflections: int = 40) -> np.ndarray:
    length = int(0.15 * sample_rate)
    h = np.zeros(length)
    direct = 1 + channel * int(rng.integers(1, 4))
    h[direct] = 1.0
    pos = rng.integers(direct + 1, length, size=n_reflections)
    decay = np.exp(-6.9 * pos / (rt60 * sample_rate))
    np.add.at(h, pos, rng.standard_normal(n_reflections) * 0.4 * decay)
    return h


def synth_noise(rng: np.random.Generator, channels: int, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    tone_f = rng.uniform(300.0, 3000.0)
    tonal = (0.5 * np.sin(2 * np.pi * 50.0 * t) + 0.25 * np.sin(2 * np.pi * 100.0 * t)
             + 0.3 * np.sin(2 * np.pi * tone_f * t + rng.uniform(0, 2 * np.pi)))
    return rng.standard_normal((channels, n)) + tonal[None, :]


@dataclass
class Scene:
    mixture: AudioClip    # (channels, n)
    reference: AudioClip  # (1, n): reverberant clean speech at the reference mic


def synth_scene(seed: int, duration_s: float, channels: int = 8, snr_db: float = 5.0,
                sample_rate: int = 16000, min_length: int = 512) -> Scene:
    """Deterministic scene: speech-like source, sparse per-mic RIRs, white+tonal noise.

    Mixture and reference share one gain that brings the larger of their
    peaks to 0.9; the gain is stored as ``meta["peak_gain"]``.
    """
    n = int(round(duration_s * sample_rate))
    if n < min_length or channels < 1:
        raise ContractError(
            f"scene needs >= {min_length} samples and >= 1 channel (got {n}, {channels})"
        )
    rng = np.random.default_rng(seed)
    dry = AudioClip(sample_rate, speech_like(rng, n, sample_rate)[None, :].astype(DTYPE))
    rir = Rir([random_rir(rng, sample_rate, c) for c in range(channels)])
    wet = convolve_rir(dry, rir)
    noise = AudioClip(sample_rate, synth_noise(rng, channels, n + sample_rate // 2, sample_rate)
                      .astype(DTYPE))
    mix = mix_at_snr(wet, noise, snr_db, rng)
    peak = max(float(np.max(np.abs(mix.frame))), float(np.max(np.abs(wet.frame[:1]))))
    gain = PEAK_TARGET / peak
    meta = dict(mix.meta, seed=int(seed), peak_gain=gain)
    mixture = AudioClip(sample_rate, (mix.frame.astype(np.float64) * gain).astype(DTYPE), meta)
    reference = AudioClip(sample_rate, (wet.frame[:1].astype(np.float64) * gain).astype(DTYPE),
                          dict(meta))
    return Scene(mixture, reference)
