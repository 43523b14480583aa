import numpy as np
import pytest

import naive
from conftest import SMALL
from tcwunet.errors import ConfigError, ContractError
from tcwunet.model import (
    AttentionParams,
    BatchNormParams,
    CacheStack,
    ModelConfig,
    TCBlockParams,
    analytic_receptive_field,
    attention_forward,
    earliest_input_index,
    forward,
    forward_offline,
    init_constant,
    init_random,
    tc_block_forward,
    validate_config,
)
from tcwunet.tensor import ConvParams, LayerCache, decimate2


def conv_p(rng, cin, cout, k=1, d=1, scale=1.0):
    return ConvParams(rng.uniform(-scale, scale, (cout, cin, k)), rng.uniform(-scale, scale, cout), d)


def eye_conv(c, k=1, d=1):
    w = np.zeros((c, c, k), np.float32)
    w[:, :, k - 1] = np.eye(c)
    return ConvParams(w, np.zeros(c), d)


def identity_bn(c):
    return BatchNormParams(np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), 0.0)


def expected_parameter_count(cfg: ModelConfig) -> int:
    def conv(cin, cout, k=1):
        return cout * cin * k + cout

    def tc(cin, cout, k):
        n = conv(cin, cout, k) + 2 * cout + cout + conv(cout, cout) + cout
        return n + (conv(cin, cout) if cin != cout else 0)

    def att(u, d):
        return conv(u, d) + 2 * conv(d, d) + d + conv(d, d)

    lad = cfg.channel_ladder
    total = sum(tc(lad[i], lad[i + 1], cfg.encoder_kernel) for i in range(cfg.num_levels))
    total += conv(lad[-1], cfg.bottleneck_channels, cfg.encoder_kernel) + cfg.bottleneck_channels
    for i in range(cfg.num_levels):
        up = cfg.bottleneck_channels if i == cfg.num_levels - 1 else lad[i + 1]
        s = lad[i + 1]
        total += conv(s, s) + att(up, s) + tc(up + s, lad[i], cfg.decoder_kernel)
    total += conv(1, lad[0]) + att(lad[0], lad[0]) + conv(2 * lad[0], 1)
    return total


# ---------------------------------------------------------------- config


def test_default_config_valid():
    check = validate_config(ModelConfig())
    assert check.ok and check.errors == []
    assert check.min_chunk == 512


def test_config_errors_are_all_reported():
    check = validate_config(ModelConfig(channel_ladder=(8, 24, 48, 72, 96, 120, 144, 168, 192)))
    assert not check.ok and any("ladder length" in e for e in check.errors)
    check = validate_config(ModelConfig(dilations=(1, 1, 1, 2, 4, 8, 16, 32)))
    assert any("dilations length" in e for e in check.errors)
    check = validate_config(ModelConfig(channel_ladder=(8, 24), dilations=(1,), input_channels=4))
    assert len(check.errors) >= 2
    check = validate_config(ModelConfig(num_levels=1, channel_ladder=(4, 8), input_channels=3,
                                        dilations=(1,)))
    assert any("channel_ladder[0]" in e for e in check.errors)
    with pytest.raises(ConfigError):
        init_random(ModelConfig(dilations=(1, 2)), 0)


# ---------------------------------------------------------------- init


def test_init_deterministic(small_config):
    a = init_random(small_config, 5).named_tensors()
    b = init_random(small_config, 5).named_tensors()
    c = init_random(small_config, 6).named_tensors()
    assert [n for n, _ in a] == [n for n, _ in b]
    assert b"".join(t.tobytes() for _, t in a) == b"".join(t.tobytes() for _, t in b)
    assert b"".join(t.tobytes() for _, t in a) != b"".join(t.tobytes() for _, t in c)


def test_init_bounds(default_model):
    for name, t in default_model.named_tensors():
        assert t.dtype == np.float32 and np.all(np.isfinite(t)), name
    for conv in _all_convs(default_model):
        _, cin, k = conv.weight.shape
        bound = np.float32(1.0 / np.sqrt(cin * k))
        assert np.max(np.abs(conv.weight)) <= bound
        assert np.max(np.abs(conv.bias)) <= bound
    blk = default_model.encoder[0]
    assert np.all(blk.bn1.gamma == 1) and np.all(blk.bn1.running_var == 1)
    assert np.all(blk.bn1.running_mean == 0) and np.all(blk.prelu1_alpha == np.float32(0.25))


def _all_convs(m):
    out = []

    def visit(obj):
        if isinstance(obj, ConvParams):
            out.append(obj)
        elif isinstance(obj, list):
            for o in obj:
                visit(o)
        elif hasattr(obj, "__dataclass_fields__") and not isinstance(obj, ModelConfig):
            for f in obj.__dataclass_fields__:
                visit(getattr(obj, f))

    visit(m)
    return out


def test_parameter_count(default_model, small_model):
    assert default_model.parameter_count() == expected_parameter_count(ModelConfig())
    assert default_model.parameter_count() == 5_810_009
    assert small_model.parameter_count() == expected_parameter_count(SMALL)


# ---------------------------------------------------------------- TC block


def test_tc_block_zero_weights():
    c = 4
    zero = ConvParams(np.zeros((c, c, 5)), np.zeros(c), 2)
    p = TCBlockParams(zero, identity_bn(c), np.full(c, 0.25), ConvParams(np.zeros((c, c, 1)), np.zeros(c)),
                      None, np.full(c, 0.25))
    p.residual_proj = ConvParams(np.zeros((c, c, 1)), np.zeros(c))
    x = np.random.default_rng(0).standard_normal((c, 16)).astype(np.float32)
    assert not tc_block_forward(x, p).any()


def test_tc_block_identity_configuration_scalar_oracle(rng):
    c = 2
    a1, a2 = 0.25, 0.1
    p = TCBlockParams(eye_conv(c, 3, 2), identity_bn(c), np.full(c, a1), eye_conv(c), None, np.full(c, a2))
    x = rng.standard_normal((c, 8)).astype(np.float32)
    y = tc_block_forward(x, p)

    def pr(v, a):
        return v if v >= 0 else a * v

    for ch in range(c):
        for t in range(8):
            ref = pr(pr(float(x[ch, t]), a1) + float(x[ch, t]), a2)
            assert y[ch, t] == pytest.approx(ref, rel=1e-6)


def test_tc_block_cached_chunks_equal_offline(small_model, rng):
    blk = small_model.encoder[1]
    x = rng.standard_normal((blk.in_channels, 24)).astype(np.float32)
    cache = LayerCache.for_conv(blk.conv1.spec)
    streamed = np.concatenate([tc_block_forward(x[:, :10], blk, cache),
                               tc_block_forward(x[:, 10:], blk, cache)], axis=1)
    np.testing.assert_array_equal(streamed, tc_block_forward(x, blk))


def test_tc_block_matches_naive(small_model, rng):
    blk = small_model.decoder[0].tc_block
    x = rng.standard_normal((blk.in_channels, 30)).astype(np.float32)
    np.testing.assert_allclose(tc_block_forward(x, blk), naive.tc_block(x, blk), rtol=1e-5, atol=1e-5)


# ---------------------------------------------------------------- attention


def _attention(rng, u_ch, d_ch):
    return AttentionParams(conv_p(rng, u_ch, d_ch), conv_p(rng, d_ch, d_ch), conv_p(rng, d_ch, d_ch),
                           np.full(d_ch, 0.25, np.float32), conv_p(rng, d_ch, d_ch))


def test_attention_zero_mask_halves(rng):
    p = _attention(rng, 3, 4)
    p.mask_conv = ConvParams(np.zeros((4, 4, 1)), np.zeros(4))
    u = rng.standard_normal((3, 6)).astype(np.float32)
    d = rng.standard_normal((4, 6)).astype(np.float32)
    np.testing.assert_array_equal(attention_forward(u, d, p), np.float32(0.5) * p.v_conv(d))


def test_attention_saturated_mask(rng):
    p = _attention(rng, 3, 4)
    p.mask_conv = ConvParams(np.zeros((4, 4, 1)), np.full(4, 100.0))
    u = rng.standard_normal((3, 6)).astype(np.float32)
    d = rng.standard_normal((4, 6)).astype(np.float32)
    np.testing.assert_allclose(attention_forward(u, d, p), p.v_conv(d), rtol=1e-6)


def test_attention_scalar_formula(rng):
    p = _attention(rng, 3, 4)
    u = rng.standard_normal((3, 6)).astype(np.float32)
    d = rng.standard_normal((4, 6)).astype(np.float32)
    y = attention_forward(u, d, p)
    k = lambda cp, x, o, t: float(cp.bias[o]) + sum(float(cp.weight[o, i, 0]) * float(x[i, t])
                                                    for i in range(x.shape[0]))
    for t in range(6):
        s = [k(p.k_conv, u, o, t) + k(p.q_conv, d, o, t) for o in range(4)]
        s = np.array([v if v >= 0 else 0.25 * v for v in s])[:, None]
        for o in range(4):
            m = float(p.mask_conv.bias[o]) + sum(float(p.mask_conv.weight[o, i, 0]) * s[i, 0] for i in range(4))
            ref = k(p.v_conv, d, o, t) / (1.0 + np.exp(-m))
            assert y[o, t] == pytest.approx(ref, rel=1e-5, abs=1e-6)


def test_attention_length_mismatch(rng):
    from tcwunet.errors import ShapeError
    with pytest.raises(ShapeError):
        attention_forward(np.zeros((3, 4)), np.zeros((4, 5)), _attention(rng, 3, 4))


# ---------------------------------------------------------------- full forward


def test_forward_shape_default(default_model, rng):
    x = rng.standard_normal((8, 16384)).astype(np.float32)
    y = forward_offline(default_model, x)
    assert y.shape == (1, 16384) and y.dtype == np.float32 and np.all(np.isfinite(y))
    np.testing.assert_array_equal(forward_offline(default_model, x), y)


def test_forward_zero_in_zero_out():
    m = init_constant(SMALL, weight=0.3, bias=0.0)
    assert not forward_offline(m, np.zeros((3, 64), np.float32)).any()
    zero_bias = init_constant(ModelConfig(), weight=0.01, bias=0.0)
    assert not forward_offline(zero_bias, np.zeros((8, 512), np.float32)).any()


def test_forward_length_contract(small_model):
    with pytest.raises(ContractError):
        forward_offline(small_model, np.zeros((3, 12), np.float32))
    with pytest.raises(ContractError):
        forward_offline(small_model, np.zeros((3, 0), np.float32))


def test_forward_matches_naive_small(small_model, rng):
    x = rng.standard_normal((3, 96)).astype(np.float32)
    np.testing.assert_allclose(forward_offline(small_model, x), naive.model_forward(small_model, x),
                               rtol=1e-4, atol=1e-5)


def test_forward_matches_naive_default(default_model, rng):
    x = rng.standard_normal((8, 1024)).astype(np.float32)
    np.testing.assert_allclose(forward_offline(default_model, x), naive.model_forward(default_model, x),
                               rtol=1e-3, atol=1e-4)


def test_forward_is_causal(small_model, rng):
    x = rng.standard_normal((3, 128)).astype(np.float32)
    base = forward_offline(small_model, x)
    for t in rng.integers(0, 128, 20):
        x2 = x.copy()
        x2[int(rng.integers(0, 3)), t] += 5.0
        y = forward_offline(small_model, x2)
        np.testing.assert_array_equal(y[:, :t], base[:, :t])


def test_trace_records_stateful_inputs(small_model, rng):
    x = rng.standard_normal((3, 32)).astype(np.float32)
    trace = {}
    forward(small_model, x, None, trace)
    names = [n for n, _ in CacheStack.for_model(small_model).ordered()]
    assert sorted(trace) == sorted(names)
    assert trace["encoder.0.conv1"].shape == (3, 32)
    assert trace["bottleneck.conv"].shape == (8, 4)


# ---------------------------------------------------------------- receptive field


def test_receptive_field_stacked_accounting():
    assert analytic_receptive_field(ModelConfig()).stacked == 1 + 14 * 129 == 1807
    one = ModelConfig(input_channels=2, num_levels=1, channel_ladder=(2, 4), dilations=(1,))
    assert analytic_receptive_field(one).stacked == 15


def test_receptive_field_decimation_aware_values():
    rf = analytic_receptive_field(ModelConfig())
    assert rf.encoder == 1 + 14 * (1 + 2 + 4 + 16 + 64 + 256 + 1024 + 4096 + 16384) == 305_859
    assert rf.model >= rf.encoder


def _impulse_earliest(fwd, n_channels, n, magnitude=50.0):
    """For each output t: earliest input index whose perturbation changes output t."""
    x = np.random.default_rng(99).standard_normal((n_channels, n)).astype(np.float32)
    base = fwd(x)[0]
    earliest = np.full(n, n, dtype=int)
    for s in range(n - 1, -1, -1):
        x2 = x.copy()
        x2[:, s] += magnitude
        earliest[fwd(x2)[0] != base] = s
    return earliest


@pytest.mark.parametrize("cfg", [
    SMALL,
    ModelConfig(input_channels=2, num_levels=2, encoder_kernel=3, decoder_kernel=2,
                channel_ladder=(2, 3, 4), bottleneck_channels=5, dilations=(2, 1)),
])
def test_model_receptive_field_matches_impulse_sweep(cfg):
    model = init_random(cfg, 11)
    n = 4 * cfg.min_chunk * 8
    t = np.arange(n)
    analytic = earliest_input_index(cfg, t)
    valid = analytic >= 0
    assert valid.sum() > cfg.min_chunk
    # float64 evaluation of the same weights: far-reaching effects are tiny
    # (~1e-8) and float32 rounding can absorb them, float64 cannot
    exact = _impulse_earliest(lambda x: naive.model_forward(model, x), cfg.input_channels, n)
    np.testing.assert_array_equal(exact[valid], analytic[valid])
    # the float32 engine never reacts to anything earlier than the bound
    engine = _impulse_earliest(lambda x: forward_offline(model, x), cfg.input_channels, n)
    assert np.all(engine[valid] >= analytic[valid])
    rf = analytic_receptive_field(cfg)
    assert rf.model == int(np.max((t - analytic + 1)[valid]))


def _encoder_out(model, x):
    h = x
    for blk in model.encoder:
        h = decimate2(tc_block_forward(h, blk))
    return h


@pytest.mark.slow
def test_default_encoder_bound_by_perturbation():
    model = init_random(ModelConfig(), 8)
    rf = analytic_receptive_field(model.config).encoder
    n = 600 * 512
    j = n // 512 - 1                       # last encoder output, aligned to input sample 512 * j
    first = 512 * j - (rf - 1)
    x = np.random.default_rng(0).standard_normal((8, n)).astype(np.float32)
    base = _encoder_out(model, x)[:, j]
    hit, miss = x.copy(), x.copy()
    hit[:, first] += 100.0
    miss[:, first - 1] += 100.0
    assert np.any(_encoder_out(model, hit)[:, j] != base)
    np.testing.assert_array_equal(_encoder_out(model, miss)[:, j], base)
