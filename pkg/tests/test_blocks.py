import numpy as np
import pytest

from linelight import ops
from linelight.adapter import (ConvAdapter, ChannelAttentionAdapter, LineAttentionAdapter,
                               QkvProjection, make_adapter)
from linelight.blocks import (ChannelAttention, Conv2d, Downsample, GroupNorm,
                              ResidualConvBlock, Upsample)
from linelight.autodiff import Tensor, rng
from linelight.errors import ConfigurationError, DimensionError
from linelight.verify import _block_cases, module_grad_error


def _x(seed, n, c, h, w, dtype=np.float32):
    return Tensor(rng(seed).normal(size=(n, c, h, w)).astype(dtype))


def _zero_params(module):
    for _, p in module.named_parameters():
        p.data = np.zeros_like(p.data)
    return module


# ------------------------------------------------------------- shape sweep

@pytest.mark.parametrize("c", [2, 4, 8])
@pytest.mark.parametrize("hw", [(4, 6), (6, 4), (8, 8), (4, 4), (6, 6), (8, 4)])
def test_shape_laws_sweep(c, hw):
    h, w = hw
    gen = rng(0)
    x = _x(1, 1, c, h, w)
    assert ResidualConvBlock(gen, c)(x).shape == (1, c, h, w)
    assert Downsample(gen, c)(x).shape == (1, 2 * c, h // 2, w // 2)
    assert Upsample(gen, c)(x).shape == (1, c // 2, 2 * h, 2 * w)
    assert ChannelAttention(gen, c)(x).shape == (1, c, h, w)
    assert LineAttentionAdapter(gen, c, 3, 2)(x).shape == (1, c, h, w)


# ---------------------------------------------------------- residual block

def test_residual_block_zero_weights_is_identity():
    block = _zero_params(ResidualConvBlock(rng(0), 4))
    x = _x(2, 1, 4, 6, 6)
    assert np.array_equal(block(x).data, x.data)


def test_residual_block_zero_input_zero_bias_gives_zero():
    block = ResidualConvBlock(rng(3), 4)
    x = Tensor(np.zeros((1, 4, 6, 6), np.float32))
    out = block(x)
    # GELU(bias=0 path) of zeros stays zero, residual adds zero
    assert np.abs(out.data).max() == 0.0


def test_residual_block_matches_manual_chain():
    """Op-composition oracle: the block equals its individually tested pieces."""
    gen = rng(5)
    block = ResidualConvBlock(gen, 4)
    x = _x(5, 1, 4, 6, 6)
    y = block.depthwise(x)
    y = block.pointwise1(y)
    y = ops.gelu(y)
    y = block.pointwise2(y)
    expect = ops.add(x, y)
    assert np.array_equal(block(x).data, expect.data)


def test_residual_block_channel_mismatch():
    with pytest.raises(DimensionError):
        ResidualConvBlock(rng(0), 4)(_x(0, 1, 3, 6, 6))


# ------------------------------------------------------------ down/upsample

def test_downsample_shape_and_composition():
    gen = rng(1)
    x = _x(1, 2, 4, 8, 8)
    once = Downsample(gen, 4)(x)
    assert once.shape == (2, 8, 4, 4)
    twice = Downsample(gen, 8)(once)
    assert twice.shape == (2, 16, 2, 2)
    with pytest.raises(DimensionError):
        Downsample(gen, 4)(_x(0, 1, 4, 5, 6))


def test_upsample_mirrors_downsample_shape():
    x = _x(2, 1, 8, 4, 4)
    assert Upsample(rng(2), 8)(x).shape == (1, 4, 8, 8)
    with pytest.raises(DimensionError):
        Upsample(rng(2), 5)


def test_pixel_shuffle_unshuffle_bijection():
    x = _x(3, 2, 4, 6, 6)
    roundtrip = ops.pixel_shuffle(ops.pixel_unshuffle(x, 2), 2)
    assert np.array_equal(roundtrip.data, x.data)
    y = _x(4, 1, 8, 3, 5)
    roundtrip2 = ops.pixel_unshuffle(ops.pixel_shuffle(y, 2), 2)
    assert np.array_equal(roundtrip2.data, y.data)


# -------------------------------------------------------- channel attention

def test_attention_map_rows_sum_to_one():
    attn = ChannelAttention(rng(4), 4)
    a = attn.attention_map(_x(4, 2, 4, 5, 5)).data
    assert np.abs(a.sum(axis=-1) - 1.0).max() < 1e-6


def test_channel_attention_global_dependence():
    """Perturbing one input pixel changes every output pixel."""
    attn = ChannelAttention(rng(5), 4)
    x = rng(6).normal(size=(1, 4, 4, 4)).astype(np.float32)
    base = attn(Tensor(x)).data
    x2 = x.copy()
    x2[0, 1, 2, 3] += 0.5
    moved = attn(Tensor(x2)).data
    assert np.all(np.abs(moved - base) > 0)


def test_channel_attention_dense_matrix_oracle():
    """C=2, H=W=2 against an explicit dense reconstruction."""
    attn = ChannelAttention(rng(7), 2)
    x = rng(8).normal(size=(1, 2, 2, 2)).astype(np.float64)
    for _, p in attn.named_parameters():
        p.data = p.data.astype(np.float64)
    got = attn(Tensor(x)).data

    def proj(point, depth, x_):
        y = ops.conv2d(Tensor(x_), point.weight, point.bias)
        return ops.conv2d(y, depth.weight, depth.bias, padding=1, groups=2).data

    q = proj(attn.q_point, attn.q_depth, x).reshape(2, 4)
    k = proj(attn.k_point, attn.k_depth, x).reshape(2, 4)
    v = proj(attn.v_point, attn.v_depth, x).reshape(2, 4)
    qh = q / np.sqrt((q ** 2).sum(-1, keepdims=True) + 1e-12)
    kh = k / np.sqrt((k ** 2).sum(-1, keepdims=True) + 1e-12)
    scores = float(attn.temperature.data) * (qh @ kh.T)
    e = np.exp(scores - scores.max(-1, keepdims=True))
    a = e / e.sum(-1, keepdims=True)
    mixed = (a @ v).reshape(1, 2, 2, 2)
    out = ops.conv2d(Tensor(mixed), attn.out_point.weight, attn.out_point.bias).data
    assert np.abs(got - (x + out)).max() < 1e-6


# ----------------------------------------------------------------- adapters

def test_qkv_projection_zero_weights_gives_bias_constants():
    proj = _zero_params(QkvProjection(rng(0), 4))
    proj.q_depth.bias.data = np.full(4, 0.7, np.float32)
    q, k, v = proj(_x(9, 1, 4, 5, 5))
    assert np.allclose(q.data, 0.7)
    assert np.abs(k.data).max() == 0.0 and np.abs(v.data).max() == 0.0


def test_adapter_structure_probe():
    """With the whole attention path zeroed the adapter reduces to
    DConv(PConv(x))."""
    adapter = LineAttentionAdapter(rng(1), 4, 3, 2)
    for mod in (adapter.qkv, adapter.point_inner):
        _zero_params(mod)
    adapter.norm.gamma.data = np.zeros(4, np.float32)
    x = _x(10, 1, 4, 6, 6)
    expect = adapter.depth_out(adapter.point_outer(x))
    assert np.array_equal(adapter(x).data, expect.data)


def test_adapter_groupnorm_stage_unit_variance():
    """The normalization stage output has per-group unit variance pre-affine."""
    adapter = LineAttentionAdapter(rng(2), 4, 3, 2)
    x = _x(11, 2, 4, 8, 8)
    t = adapter.attend(x)
    normed = ops.group_norm(t, 2, Tensor(np.ones(4, np.float32)),
                            Tensor(np.zeros(4, np.float32))).data
    grouped = normed.reshape(2, 2, -1)
    assert np.abs(grouped.var(axis=2) - 1.0).max() < 1e-3


def test_adapter_streaming_matches_taped_forward():
    adapter = LineAttentionAdapter(rng(3), 4, 3, 2)
    x = _x(12, 2, 4, 8, 8)
    assert np.array_equal(adapter(x).data, adapter(x, streaming=True).data)


def test_make_adapter_kinds():
    gen = rng(4)
    assert isinstance(make_adapter("conv", gen, 4, 3, 2), ConvAdapter)
    assert isinstance(make_adapter("channel_attention", gen, 4, 3, 2),
                      ChannelAttentionAdapter)
    assert isinstance(make_adapter("line_attention", gen, 4, 3, 2), LineAttentionAdapter)
    with pytest.raises(ConfigurationError):
        make_adapter("mystery", gen, 4, 3, 2)
    x = _x(13, 1, 4, 6, 6)
    for kind in ("conv", "channel_attention"):
        assert make_adapter(kind, gen, 4, 3, 2)(x).shape == x.shape


# ----------------------------------------------------------- gradient checks

@pytest.mark.parametrize("name", sorted(_block_cases()))
def test_block_gradients(name):
    build, shape = _block_cases()[name]
    err = module_grad_error(build, shape, seed=0)
    assert err < 1e-4, f"{name}: rel err {err:.2e}"


def test_conv_layer_macs_formula():
    conv = Conv2d(rng(0), 4, 8, 3, stride=1, padding=1)
    assert conv.macs(10, 12) == 8 * 10 * 12 * 4 * 9
    dw = Conv2d(rng(0), 6, 6, 7, padding=3, groups=6)
    assert dw.macs(5, 5) == 6 * 5 * 5 * 1 * 49


def test_group_norm_block_runs():
    gn = GroupNorm(4, 2)
    out = gn(_x(14, 1, 4, 4, 4))
    assert out.shape == (1, 4, 4, 4)
