"""Command-line interface.

Exit codes (stable):

    0  success
    1  equivalence check failed
    2  usage error (bad flags)
    3  invalid geometry or configuration (chunk size, length, config file)
    4  input channel count does not match the model
    5  weight file missing or unreadable
    6  input audio missing or unreadable
    7  output location not writable
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import zlib
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import __version__
from .bench import benchmark_streaming
from .errors import ConfigError, ContractError, TCWUError, WavError, WeightFileError
from .metrics import MetricReport, reports_to_text, si_snr, wsdr_loss
from .model import ModelConfig, forward_offline, init_random, validate_config
from .scene import synth_scene
from .streaming import StreamConfig, stream_signal, verify_streaming_equivalence
from .tensor import DTYPE
from .wav import ENCODINGS, AudioClip, read_wav, write_wav
from .weights_io import load_weights, read_manifest, save_weights, to_bytes

REFERENCE_PARAMS = 8.31e6  # bench reports the parameter delta against this
VERIFY_THRESHOLD = 1e-5


class ExitCode(IntEnum):
    OK = 0
    VERIFY_FAILED = 1
    USAGE = 2
    GEOMETRY = 3
    CHANNEL_MISMATCH = 4
    BAD_WEIGHTS = 5
    INPUT_ERROR = 6
    OUTPUT_ERROR = 7


class CliError(Exception):
    def __init__(self, code: ExitCode, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    command: str
    config: dict | None = None
    config_path: str | None = None
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    chunk_len: int | None = None
    push_len: int | None = None
    timing: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _write(path: Path, data: bytes | str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            path.write_text(data)
        else:
            path.write_bytes(data)
    except OSError as exc:
        raise CliError(ExitCode.OUTPUT_ERROR, f"cannot write {path}: {exc}") from exc


def _load_config(path: str | None) -> ModelConfig:
    if path is None:
        return ModelConfig()
    try:
        cfg = ModelConfig.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise CliError(ExitCode.GEOMETRY, f"bad config file {path}: {exc}") from exc
    check = validate_config(cfg)
    if not check.ok:
        raise CliError(ExitCode.GEOMETRY, "; ".join(check.errors))
    return cfg


def _load_weights(path: str):
    try:
        return load_weights(path)
    except OSError as exc:
        raise CliError(ExitCode.BAD_WEIGHTS, f"cannot read weights {path}: {exc}") from exc
    except WeightFileError as exc:
        raise CliError(ExitCode.BAD_WEIGHTS, f"bad weights file {path}: {exc}") from exc


def _model_from_args(args):
    if getattr(args, "weights", None):
        return _load_weights(args.weights)
    return init_random(_load_config(args.config), args.seed)


def _chunk_cfg(model, chunk: int) -> StreamConfig:
    cfg = StreamConfig(chunk_len=chunk)
    try:
        cfg.check(model.config.num_levels)
    except ConfigError as exc:
        raise CliError(ExitCode.GEOMETRY, str(exc)) from exc
    return cfg


def enhance_frame(model, frame: np.ndarray, mode: str, chunk: int, push: int | None) -> np.ndarray:
    """Enhance a whole multi-channel frame; both modes return identical samples."""
    n = frame.shape[1]
    if mode == "offline":
        step = model.config.min_chunk
        padded_len = max(step, -(-n // step) * step)
        padded = np.zeros((frame.shape[0], padded_len), dtype=DTYPE)
        padded[:, :n] = frame
        return forward_offline(model, padded)[:, :n]
    return stream_signal(model, frame, chunk, push)


def cmd_enhance(args) -> int:
    model = _load_weights(args.weights)
    _chunk_cfg(model, args.chunk)
    try:
        clip = read_wav(args.input)
    except OSError as exc:
        raise CliError(ExitCode.INPUT_ERROR, f"cannot read {args.input}: {exc}") from exc
    except WavError as exc:
        raise CliError(ExitCode.INPUT_ERROR, f"bad WAV {args.input}: {exc}") from exc
    want = model.config.input_channels
    if clip.channels != want:
        raise CliError(ExitCode.CHANNEL_MISMATCH,
                       f"{args.input} has {clip.channels} channels, model expects {want}")
    t0 = time.perf_counter()
    out = enhance_frame(model, clip.frame, args.mode, args.chunk, args.push)
    compute = time.perf_counter() - t0
    out_path = Path(args.output)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(out_path, AudioClip(clip.sample_rate, out), args.encoding)
    except OSError as exc:
        raise CliError(ExitCode.OUTPUT_ERROR, f"cannot write {out_path}: {exc}") from exc
    manifest = RunManifest(
        command="enhance", config=model.config.to_dict(),
        inputs={"audio": str(args.input), "weights": str(args.weights)},
        outputs={"audio": str(out_path)},
        chunk_len=args.chunk, push_len=(args.push or args.chunk) if args.mode == "stream" else None,
        timing={"compute_s": compute, "audio_s": clip.duration,
                "rtf": compute / clip.duration if clip.length else None},
    )
    manifest.inputs["mode"] = args.mode
    _write(Path(str(out_path) + ".manifest.json"), manifest.to_json())
    print(f"wrote {out_path} ({out.shape[1]} samples, mode={args.mode})")
    return ExitCode.OK


def cmd_verify(args) -> int:
    model = _model_from_args(args)
    step = model.config.min_chunk
    if args.len <= 0 or args.len % step:
        raise CliError(ExitCode.GEOMETRY, f"--len must be a positive multiple of {step}")
    _chunk_cfg(model, args.chunk)
    rng = np.random.default_rng(args.input_seed)
    x = rng.standard_normal((model.config.input_channels, args.len)).astype(DTYPE)
    try:
        diff = verify_streaming_equivalence(model, x, args.chunk)
    except (ConfigError, ContractError) as exc:
        raise CliError(ExitCode.GEOMETRY, str(exc)) from exc
    passed = diff <= args.threshold
    manifest = RunManifest(
        command="verify", config=model.config.to_dict(), config_path=args.config or args.weights,
        seed=args.seed, chunk_len=args.chunk,
        inputs={"len": args.len, "input_seed": args.input_seed},
        metrics=[MetricReport("max_abs_diff", diff, {"threshold": args.threshold}).to_dict()],
    )
    print(f"max_abs_diff={diff!r}")
    print("PASS" if passed else "FAIL")
    if args.manifest:
        _write(Path(args.manifest), manifest.to_json())
    return ExitCode.OK if passed else ExitCode.VERIFY_FAILED


def cmd_bench(args) -> int:
    model = _model_from_args(args)
    _chunk_cfg(model, args.chunk)
    if args.duration < 1.0:
        raise CliError(ExitCode.GEOMETRY, "--duration must be at least 1 s")
    if args.repeat < 1:
        raise CliError(ExitCode.GEOMETRY, "--repeat must be >= 1")
    res = benchmark_streaming(model, args.duration, args.chunk, args.repeat, seed=args.seed)
    params = res.parameter_count
    lines = [
        f"parameters={params}",
        f"parameters_vs_8.31M={params - REFERENCE_PARAMS:+.0f}",
        f"chunk_len={res.chunk_len} ({res.chunk_ms:.1f} ms)",
        f"audio_seconds={res.audio_seconds:.3f}",
        "rtf_runs=" + ",".join(f"{r:.4f}" for r in res.rtf_runs),
        f"rtf_median={res.rtf_median:.4f}",
        f"rtf_min={res.rtf_min:.4f}",
        f"rtf_spread={res.rtf_spread:.3f}",
        f"latency_ms_p50={res.latency_ms_p50:.3f}",
        f"latency_ms_p95={res.latency_ms_p95:.3f}",
        f"latency_ms_max={res.latency_ms_max:.3f}",
    ]
    print("\n".join(lines))
    if args.manifest:
        manifest = RunManifest(
            command="bench", config=model.config.to_dict(), config_path=args.config or args.weights,
            seed=args.seed, chunk_len=args.chunk, timing=res.to_dict(),
        )
        _write(Path(args.manifest), manifest.to_json())
    return ExitCode.OK


def cmd_synth(args) -> int:
    try:
        scene = synth_scene(args.seed, args.duration, args.channels, args.snr)
    except ContractError as exc:
        raise CliError(ExitCode.GEOMETRY, str(exc)) from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_wav(out / "mixture.wav", scene.mixture, args.encoding)
        write_wav(out / "reference.wav", scene.reference, args.encoding)
    except OSError as exc:
        raise CliError(ExitCode.OUTPUT_ERROR, f"cannot write into {out}: {exc}") from exc
    ref = scene.reference.frame[0]
    noisy = scene.mixture.frame[0]
    reports = [
        wsdr_loss(noisy, ref, noisy),
        MetricReport("si_snr_noisy_db", si_snr(ref, noisy)),
    ]
    manifest = RunManifest(
        command="synth", seed=args.seed,
        inputs={"duration_s": args.duration, "snr_db": args.snr, "channels": args.channels,
                "encoding": args.encoding},
        outputs={"mixture": "mixture.wav", "reference": "reference.wav",
                 "peak_gain": scene.mixture.meta["peak_gain"]},
        metrics=[r.to_dict() for r in reports],
    )
    _write(out / "manifest.json", manifest.to_json())
    print(reports_to_text(reports), end="")
    return ExitCode.OK


def cmd_init_weights(args) -> int:
    model = init_random(_load_config(args.config), args.seed)
    out = Path(args.out)
    _write(out, to_bytes(model))
    manifest = RunManifest(command="init-weights", config=model.config.to_dict(),
                           config_path=args.config, seed=args.seed, outputs={"weights": str(out)})
    _write(Path(str(out) + ".manifest.json"), manifest.to_json())
    print(f"wrote {out} ({model.parameter_count()} parameters)")
    return ExitCode.OK


def cmd_inspect(args) -> int:
    try:
        buf = Path(args.weights).read_bytes()
    except OSError as exc:
        raise CliError(ExitCode.BAD_WEIGHTS, f"cannot read weights {args.weights}: {exc}") from exc
    model = _load_weights(args.weights)
    manifest, start = read_manifest(buf)
    print(f"config={json.dumps(manifest['config'], sort_keys=True)}")
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        off = start + entry["offset"]
        crc = zlib.crc32(buf[off:off + nbytes])
        dims = "x".join(str(s) for s in shape)
        print(f"{entry['name']}\t{dims}\tcrc32={crc:08x}")
    print(f"tensors={len(manifest['tensors'])} parameters={model.parameter_count()}")
    if args.rewrite:
        save_path = Path(args.rewrite)
        try:
            save_weights(model, save_path)
        except OSError as exc:
            raise CliError(ExitCode.OUTPUT_ERROR, f"cannot write {save_path}: {exc}") from exc
    return ExitCode.OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcwunet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def model_source(p):
        p.add_argument("--weights", help="TCWU weight file (default: random weights)")
        p.add_argument("--seed", type=int, default=42, help="seed for random weights / data")
        p.add_argument("--config", help="JSON model config for random weights")

    p = sub.add_parser("enhance", help="enhance a multi-channel WAV file")
    p.add_argument("input")
    p.add_argument("weights")
    p.add_argument("output")
    p.add_argument("--mode", choices=("offline", "stream"), default="stream")
    p.add_argument("--chunk", type=int, default=512, help="internal chunk length in samples")
    p.add_argument("--push", type=int, default=None,
                   help="stream-mode push size (e.g. 640 = 40 ms at 16 kHz)")
    p.add_argument("--encoding", choices=ENCODINGS, default="float32")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("verify", help="check streamed output against offline inference")
    model_source(p)
    p.add_argument("--len", type=int, default=16384)
    p.add_argument("--chunk", type=int, default=512)
    p.add_argument("--input-seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=VERIFY_THRESHOLD)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="measure streaming real-time factor")
    model_source(p)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--chunk", type=int, default=512)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic noisy scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--snr", type=float, default=5.0)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--encoding", choices=ENCODINGS, default="float32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-weights", help="write seeded random weights")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("inspect", help="list the tensors of a weight file")
    p.add_argument("weights")
    p.add_argument("--rewrite", help="load and re-save the container to this path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return int(exc.code)
    except TCWUError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return int(ExitCode.GEOMETRY)


if __name__ == "__main__":
    sys.exit(main())
