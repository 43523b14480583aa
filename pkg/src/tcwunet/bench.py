"""Real-time-factor benchmark for the streaming engine."""

from __future__ import annotations

import gc
import time
from dataclasses import asdict, dataclass

import numpy as np

from .metrics import rtf
from .model import ModelWeights
from .scene import synth_scene
from .streaming import StreamConfig, StreamState

WARMUP_SECONDS = 1.0


@dataclass
class BenchResult:
    chunk_len: int
    sample_rate: int
    audio_seconds: float
    rtf_runs: list[float]
    rtf_median: float
    rtf_min: float
    rtf_spread: float  # (max - min) / median over the timed runs
    latency_ms_p50: float
    latency_ms_p95: float
    latency_ms_max: float
    chunk_ms: float
    parameter_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _timed_pass(model: ModelWeights, audio: np.ndarray, cfg: StreamConfig) -> list[float]:
    state = StreamState(model, cfg)
    step = cfg.chunk_len
    n = audio.shape[1] // step * step
    latencies = []
    # like timeit, keep the collector from landing inside a timed chunk
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for s in range(0, n, step):
            block = audio[:, s:s + step]
            t0 = time.perf_counter()
            state.push(block)
            latencies.append(time.perf_counter() - t0)
    finally:
        if was_enabled:
            gc.enable()
    return latencies


def benchmark_streaming(model: ModelWeights, duration_s: float = 10.0, chunk_len: int = 512,
                        repeat: int = 3, seed: int = 0, sample_rate: int = 16000) -> BenchResult:
    """Stream a synthetic clip ``repeat`` times and time every chunk.

    Only the push calls are timed, so the factor reflects model compute and
    excludes signal generation and I/O.  A short untimed pass runs first to
    trigger JIT compilation and warm caches.
    """
    if duration_s < 1.0:
        raise ValueError("benchmark duration must be at least 1 s")
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    cfg = StreamConfig(chunk_len=chunk_len, sample_rate=sample_rate)
    cfg.check(model.config.num_levels)
    scene = synth_scene(seed, duration_s, model.config.input_channels, sample_rate=sample_rate,
                        min_length=chunk_len)
    audio = scene.mixture.frame
    n = audio.shape[1] // chunk_len * chunk_len
    audio_seconds = n / sample_rate

    warm = max(chunk_len, int(WARMUP_SECONDS * sample_rate) // chunk_len * chunk_len)
    _timed_pass(model, audio[:, :warm], cfg)

    runs, all_lat = [], []
    for _ in range(repeat):
        lat = _timed_pass(model, audio, cfg)
        runs.append(rtf(sum(lat), audio_seconds))
        all_lat.extend(lat)
    lat_ms = 1e3 * np.asarray(all_lat)
    return BenchResult(
        chunk_len=chunk_len,
        sample_rate=sample_rate,
        audio_seconds=audio_seconds,
        rtf_runs=runs,
        rtf_median=float(np.median(runs)),
        rtf_min=float(np.min(runs)),
        rtf_spread=float((np.max(runs) - np.min(runs)) / np.median(runs)),
        latency_ms_p50=float(np.percentile(lat_ms, 50)),
        latency_ms_p95=float(np.percentile(lat_ms, 95)),
        latency_ms_max=float(np.max(lat_ms)),
        chunk_ms=1e3 * chunk_len / sample_rate,
        parameter_count=model.parameter_count(),
    )
