"""TC Wave-U-Net graph: configuration, parameters, and forward passes.

Layout of the network (``L = num_levels``)::

    encoder level i  : TC block (kernel 15, dilation d_i) -> skip tap -> decimate2
    bottleneck       : causal conv (encoder kernel, dilation 1) -> PReLU
    decoder level i  : upsample2_causal -> attention(u=up, d=skip_conv(skip_i))
                       -> concat(up, attention) -> TC block (kernel 5, dilation d_i)
    output           : attention(u=decoder out, d=proj(noisy reference channel))
                       -> concat -> pointwise conv to one channel (linear)

Decoder levels run from ``L - 1`` down to ``0``.  Encoder level ``i`` maps
``ladder[i] -> ladder[i + 1]``; decoder level ``i`` maps back to ``ladder[i]``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, ContractError, DataError, ShapeError
from .tensor import (
    DTYPE,
    ConvParams,
    Frame,
    LayerCache,
    as_frame,
    batchnorm_affine,
    concat_channels,
    decimate2,
    prelu,
    sigmoid,
    upsample2_causal,
)

REFERENCE_CHANNEL = 0
PRELU_INIT = 0.25


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 8
    num_levels: int = 9
    encoder_kernel: int = 15
    decoder_kernel: int = 5
    channel_ladder: tuple[int, ...] = (8, 24, 48, 72, 96, 120, 144, 168, 192, 216)
    bottleneck_channels: int = 240
    dilations: tuple[int, ...] = (1, 1, 1, 2, 4, 8, 16, 32, 64)
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "channel_ladder", tuple(int(c) for c in self.channel_ladder))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))

    @property
    def min_chunk(self) -> int:
        return 2 ** self.num_levels

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channel_ladder"] = list(self.channel_ladder)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ConfigCheck:
    errors: list[str]
    min_chunk: int

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_config(config: ModelConfig) -> ConfigCheck:
    """Check every config invariant and collect all violations."""
    errors = []
    n = config.num_levels
    if n < 1:
        errors.append(f"num_levels must be >= 1, got {n}")
    if config.input_channels < 1:
        errors.append(f"input_channels must be >= 1, got {config.input_channels}")
    if len(config.channel_ladder) != n + 1:
        errors.append(
            f"ladder length {len(config.channel_ladder)} != num_levels + 1 = {n + 1}"
        )
    elif config.channel_ladder[0] != config.input_channels:
        errors.append(
            f"channel_ladder[0] = {config.channel_ladder[0]} != input_channels = {config.input_channels}"
        )
    if any(c < 1 for c in config.channel_ladder):
        errors.append("channel_ladder entries must be positive")
    if len(config.dilations) != n:
        errors.append(f"dilations length {len(config.dilations)} != num_levels = {n}")
    if any(d < 1 for d in config.dilations):
        errors.append("dilations must be positive")
    if config.encoder_kernel < 1 or config.decoder_kernel < 1:
        errors.append("kernel sizes must be positive")
    if config.bottleneck_channels < 1:
        errors.append("bottleneck_channels must be positive")
    if not config.bn_eps >= 0:
        errors.append(f"bn_eps must be non-negative, got {config.bn_eps}")
    return ConfigCheck(errors, 2 ** max(n, 0))


def require_valid(config: ModelConfig) -> None:
    check = validate_config(config)
    if not check.ok:
        raise ConfigError("; ".join(check.errors))


# --------------------------------------------------------------------------
# parameter containers


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5


@dataclass
class TCBlockParams:
    conv1: ConvParams
    bn1: BatchNormParams
    prelu1_alpha: np.ndarray
    conv2: ConvParams
    residual_proj: ConvParams | None
    prelu_out_alpha: np.ndarray

    @property
    def in_channels(self) -> int:
        return self.conv1.spec.in_channels


@dataclass
class AttentionParams:
    k_conv: ConvParams
    q_conv: ConvParams
    v_conv: ConvParams
    prelu_alpha: np.ndarray
    mask_conv: ConvParams


@dataclass
class DecoderLevelParams:
    skip_conv: ConvParams
    attention: AttentionParams
    tc_block: TCBlockParams


@dataclass
class BottleneckParams:
    conv: ConvParams
    prelu_alpha: np.ndarray


@dataclass
class ModelWeights:
    config: ModelConfig
    encoder: list[TCBlockParams]
    bottleneck: BottleneckParams
    decoder: list[DecoderLevelParams]  # indexed by level, 0 = full rate
    final_skip_conv: ConvParams
    final_attention: AttentionParams
    output_conv: ConvParams

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        return list(_walk(self, ""))

    def parameter_count(self, learnable_only: bool = True) -> int:
        total = 0
        for name, arr in self.named_tensors():
            if learnable_only and name.endswith(("running_mean", "running_var")):
                continue
            total += arr.size
        return total


def _walk(obj, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
    join = (lambda n: f"{prefix}.{n}") if prefix else (lambda n: n)
    if isinstance(obj, np.ndarray):
        yield prefix, obj
    elif isinstance(obj, ConvParams):
        yield join("weight"), obj.weight
        yield join("bias"), obj.bias
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _walk(item, join(str(i)))
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, ModelConfig):
        for f in dataclasses.fields(obj):
            yield from _walk(getattr(obj, f.name), join(f.name))


# A tensor factory gets (name, shape, kind, fan_in) and returns the array.
TensorFactory = Callable[[str, tuple, str, int], np.ndarray]


def build_weights(config: ModelConfig, make: TensorFactory) -> ModelWeights:
    """Assemble a ModelWeights by asking ``make`` for every tensor in graph order."""
    require_valid(config)
    ladder = config.channel_ladder

    def conv(name, cin, cout, k=1, dilation=1):
        fan_in = cin * k
        return ConvParams(
            make(f"{name}.weight", (cout, cin, k), "weight", fan_in),
            make(f"{name}.bias", (cout,), "bias", fan_in),
            dilation,
        )

    def vec(name, c, kind):
        return make(name, (c,), kind, 0)

    def tc_block(name, cin, cout, k, dilation):
        return TCBlockParams(
            conv1=conv(f"{name}.conv1", cin, cout, k, dilation),
            bn1=BatchNormParams(
                vec(f"{name}.bn1.gamma", cout, "bn_gamma"),
                vec(f"{name}.bn1.beta", cout, "bn_beta"),
                vec(f"{name}.bn1.running_mean", cout, "bn_mean"),
                vec(f"{name}.bn1.running_var", cout, "bn_var"),
                config.bn_eps,
            ),
            prelu1_alpha=vec(f"{name}.prelu1_alpha", cout, "alpha"),
            conv2=conv(f"{name}.conv2", cout, cout),
            residual_proj=conv(f"{name}.residual_proj", cin, cout) if cin != cout else None,
            prelu_out_alpha=vec(f"{name}.prelu_out_alpha", cout, "alpha"),
        )

    def attention(name, u_ch, d_ch):
        width = d_ch
        return AttentionParams(
            k_conv=conv(f"{name}.k_conv", u_ch, width),
            q_conv=conv(f"{name}.q_conv", d_ch, width),
            v_conv=conv(f"{name}.v_conv", d_ch, d_ch),
            prelu_alpha=vec(f"{name}.prelu_alpha", width, "alpha"),
            mask_conv=conv(f"{name}.mask_conv", width, d_ch),
        )

    encoder = [
        tc_block(f"encoder.{i}", ladder[i], ladder[i + 1], config.encoder_kernel, config.dilations[i])
        for i in range(config.num_levels)
    ]
    bottleneck = BottleneckParams(
        conv("bottleneck.conv", ladder[-1], config.bottleneck_channels, config.encoder_kernel),
        vec("bottleneck.prelu_alpha", config.bottleneck_channels, "alpha"),
    )
    decoder = []
    for i in range(config.num_levels):
        up_ch = config.bottleneck_channels if i == config.num_levels - 1 else ladder[i + 1]
        skip_ch = ladder[i + 1]
        decoder.append(DecoderLevelParams(
            skip_conv=conv(f"decoder.{i}.skip_conv", skip_ch, skip_ch),
            attention=attention(f"decoder.{i}.attention", up_ch, skip_ch),
            tc_block=tc_block(f"decoder.{i}.tc_block", up_ch + skip_ch, ladder[i],
                              config.decoder_kernel, config.dilations[i]),
        ))
    out_ch = ladder[0]
    return ModelWeights(
        config=config,
        encoder=encoder,
        bottleneck=bottleneck,
        decoder=decoder,
        final_skip_conv=conv("final_skip_conv", 1, out_ch),
        final_attention=attention("final_attention", out_ch, out_ch),
        output_conv=conv("output_conv", 2 * out_ch, 1),
    )


def init_random(config: ModelConfig, seed: int) -> ModelWeights:
    """Seeded random weights for testing and benchmarking.

    Conv weights and biases are uniform in ``±1/sqrt(fan_in)`` with
    ``fan_in = in_channels * kernel_size``; batch-norm uses gamma 1, beta 0,
    running mean 0, running variance 1; every PReLU slope is 0.25.  Tensors
    are drawn from a PCG64 generator in graph order.
    """
    rng = np.random.default_rng(seed)

    def make(name, shape, kind, fan_in):
        if kind in ("weight", "bias"):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(DTYPE)
        fill = {"bn_gamma": 1.0, "bn_beta": 0.0, "bn_mean": 0.0, "bn_var": 1.0, "alpha": PRELU_INIT}[kind]
        return np.full(shape, fill, dtype=DTYPE)

    return build_weights(config, make)


def init_constant(config: ModelConfig, weight: float = 0.0, bias: float = 0.0) -> ModelWeights:
    """Weights with every conv tensor set to a constant (useful for degenerate-case tests)."""
    def make(name, shape, kind, fan_in):
        fill = {"weight": weight, "bias": bias, "bn_gamma": 1.0, "bn_beta": 0.0,
                "bn_mean": 0.0, "bn_var": 1.0, "alpha": PRELU_INIT}[kind]
        return np.full(shape, fill, dtype=DTYPE)

    return build_weights(config, make)


def weights_from_tensors(config: ModelConfig, tensors: dict[str, np.ndarray]) -> ModelWeights:
    """Rebuild ModelWeights from a name -> array mapping (e.g. a loaded container)."""
    used = set()

    def make(name, shape, kind, fan_in):
        if name not in tensors:
            raise ConfigError(f"missing tensor {name!r}")
        arr = np.asarray(tensors[name], dtype=DTYPE)
        if arr.shape != tuple(shape):
            raise ShapeError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"tensor {name!r} contains non-finite values")
        used.add(name)
        return arr

    weights = build_weights(config, make)
    extra = set(tensors) - used
    if extra:
        raise ConfigError(f"unexpected tensors: {sorted(extra)}")
    return weights


# --------------------------------------------------------------------------
# caches


@dataclass
class CacheStack:
    """One history cache per stateful layer of the graph."""

    encoder: list[LayerCache]
    bottleneck: LayerCache
    decoder: list[LayerCache]   # indexed by level
    upsample: list[LayerCache]  # indexed by level

    @classmethod
    def for_model(cls, model: ModelWeights) -> "CacheStack":
        n = model.config.num_levels
        return cls(
            encoder=[LayerCache.for_conv(b.conv1.spec) for b in model.encoder],
            bottleneck=LayerCache.for_conv(model.bottleneck.conv.spec),
            decoder=[LayerCache.for_conv(lvl.tc_block.conv1.spec) for lvl in model.decoder],
            upsample=[
                LayerCache(model.decoder[i].attention.k_conv.spec.in_channels, 1) for i in range(n)
            ],
        )

    def ordered(self) -> list[tuple[str, LayerCache]]:
        """Caches in execution order: encoder, bottleneck, then decoder levels top-down."""
        items = [(f"encoder.{i}.conv1", c) for i, c in enumerate(self.encoder)]
        items.append(("bottleneck.conv", self.bottleneck))
        for i in reversed(range(len(self.decoder))):
            items.append((f"decoder.{i}.upsample", self.upsample[i]))
            items.append((f"decoder.{i}.tc_block.conv1", self.decoder[i]))
        return items

    def reset(self) -> None:
        for _, c in self.ordered():
            c.reset()


# --------------------------------------------------------------------------
# forward passes


def tc_block_forward(x: Frame, p: TCBlockParams, cache: LayerCache | None = None) -> Frame:
    x = as_frame(x)
    if x.shape[0] != p.in_channels:
        raise ShapeError(f"TC block expects {p.in_channels} channels, got {x.shape[0]}")
    h = p.conv1(x, cache)
    bn = p.bn1
    h = batchnorm_affine(h, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps)
    h = prelu(h, p.prelu1_alpha)
    # dropout is the identity at inference
    h = p.conv2(h)
    res = p.residual_proj(x) if p.residual_proj is not None else x
    return prelu(h + res, p.prelu_out_alpha)


def attention_gate(p: Frame) -> Frame:
    return sigmoid(p)


def attention_forward(u: Frame, d: Frame, p: AttentionParams) -> Frame:
    """Gate ``v(d)`` with a mask computed from ``k(u) + q(d)``."""
    u = as_frame(u)
    d = as_frame(d)
    if u.shape[1] != d.shape[1]:
        raise ShapeError(f"attention inputs differ in length: {u.shape[1]} vs {d.shape[1]}")
    summed = prelu(p.k_conv(u) + p.q_conv(d), p.prelu_alpha)
    mask = attention_gate(p.mask_conv(summed))
    return mask * p.v_conv(d)


def forward(model: ModelWeights, x: Frame, caches: CacheStack | None = None,
            trace: dict[str, Frame] | None = None) -> Frame:
    """Run the full graph on ``x``; with ``caches`` the call continues a stream.

    ``trace``, when given, receives the input of every stateful layer keyed
    by the names used in :meth:`CacheStack.ordered`.
    """
    cfg = model.config
    x = as_frame(x, cfg.input_channels)
    if x.shape[1] % cfg.min_chunk:
        raise ContractError(f"input length {x.shape[1]} is not a multiple of {cfg.min_chunk}")

    def record(name, frame):
        if trace is not None:
            trace[name] = frame

    skips = []
    h = x
    for i, block in enumerate(model.encoder):
        record(f"encoder.{i}.conv1", h)
        h = tc_block_forward(h, block, caches.encoder[i] if caches else None)
        skips.append(h)
        h = decimate2(h)
    record("bottleneck.conv", h)
    h = prelu(model.bottleneck.conv(h, caches.bottleneck if caches else None),
              model.bottleneck.prelu_alpha)
    for i in reversed(range(cfg.num_levels)):
        level = model.decoder[i]
        record(f"decoder.{i}.upsample", h)
        up = upsample2_causal(h, caches.upsample[i] if caches else None)
        gated = attention_forward(up, level.skip_conv(skips[i]), level.attention)
        h = concat_channels(up, gated)
        record(f"decoder.{i}.tc_block.conv1", h)
        h = tc_block_forward(h, level.tc_block, caches.decoder[i] if caches else None)
    ref = model.final_skip_conv(x[REFERENCE_CHANNEL:REFERENCE_CHANNEL + 1])
    gated = attention_forward(h, ref, model.final_attention)
    return model.output_conv(concat_channels(h, gated))


def forward_offline(model: ModelWeights, x: Frame) -> Frame:
    """Whole-utterance inference; equals streaming from zeroed caches."""
    x = as_frame(x, model.config.input_channels)
    if x.shape[1] == 0:
        raise ContractError("input must be non-empty")
    return forward(model, x, None)


# --------------------------------------------------------------------------
# receptive field


@dataclass(frozen=True)
class ReceptiveField:
    stacked: int    # dilated-stack accounting, ignores decimation
    encoder: int    # input span feeding one encoder output, decimation-aware
    model: int      # worst-case input span feeding one model output sample


def analytic_receptive_field(config: ModelConfig) -> ReceptiveField:
    require_valid(config)
    k_enc = config.encoder_kernel
    stacked = 1 + (k_enc - 1) * sum(config.dilations)
    encoder = 1 + sum((k_enc - 1) * d * 2 ** i for i, d in enumerate(config.dilations))
    period = config.min_chunk
    t = np.arange(4 * period, 5 * period)
    earliest = earliest_input_index(config, t)
    return ReceptiveField(stacked, encoder, int(np.max(t - earliest + 1)))


def earliest_input_index(config: ModelConfig, t: np.ndarray) -> np.ndarray:
    """Earliest input sample that can influence model output sample ``t``.

    Indices may go negative: the analysis assumes an unbounded past.
    """
    n = config.num_levels
    enc_span = [(config.encoder_kernel - 1) * d for d in config.dilations]
    dec_span = [(config.decoder_kernel - 1) * d for d in config.dilations]
    bottleneck_span = config.encoder_kernel - 1

    def encoder_in(level, idx):
        # earliest input sample behind sample idx of encoder level `level`'s input
        for i in reversed(range(level)):
            idx = 2 * idx - enc_span[i]
        return idx

    def skip(level, idx):
        return encoder_in(level, idx - enc_span[level])

    def up_path(level, idx):
        # input of the upsampler at `level`, at the lower rate
        low = np.where(idx % 2 == 0, idx // 2 - 1, idx // 2)
        if level == n - 1:
            return encoder_in(n, low - bottleneck_span)
        return decoder_out(level + 1, low)

    def decoder_out(level, idx):
        idx = idx - dec_span[level]
        return np.minimum(up_path(level, idx), skip(level, idx))

    t = np.asarray(t)
    return np.minimum(decoder_out(0, t), t)
