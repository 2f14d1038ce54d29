import json
import struct

import numpy as np
import pytest

from linelight.adapter import LineAttentionAdapter
from linelight.autodiff import Tensor, rng, tape
from linelight.errors import ConfigurationError, DimensionError, FormatError
from linelight.fileio import read_tensor_file, CHECKPOINT_MAGIC
from linelight.model import ModelConfig, build, load
from linelight import ops
from linelight.verify import network_grad_error


def _x(seed, shape):
    return Tensor(rng(seed).normal(size=shape).astype(np.float32))


# ----------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigurationError, match="norm_groups"):
        ModelConfig(base_channels=6, norm_groups=4).validate()
    with pytest.raises(ConfigurationError, match="odd"):
        ModelConfig(window_rows=4).validate()
    with pytest.raises(ConfigurationError, match="adapter_kind"):
        ModelConfig(adapter_kind="nope").validate()
    with pytest.raises(ConfigurationError, match="unknown"):
        ModelConfig.from_dict({"widht": 3})
    cfg = ModelConfig(window_rows=[7, 5, 3])
    assert cfg.windows() == [7, 5, 3]
    with pytest.raises(ConfigurationError):
        ModelConfig(window_rows=[7, 5]).windows()


def test_config_roundtrip():
    cfg = ModelConfig.tiny()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------------ build

def test_build_deterministic_parameters():
    a = build(ModelConfig.tiny(), seed=5)
    b = build(ModelConfig.tiny(), seed=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_build_without_adapter_has_no_line_attention_params():
    m = build(ModelConfig(num_scales=2, base_channels=8, norm_groups=2,
                          use_adapter=False), seed=0)
    assert m.adapters == []
    assert not any("adapters" in name for name, _ in m.named_parameters())
    full = build(ModelConfig(num_scales=2, base_channels=8, norm_groups=2), seed=0)
    assert sum(isinstance(a, LineAttentionAdapter) for a in full.adapters) == 2


def test_adapter_count_equals_num_scales():
    for s in (1, 2, 3):
        cfg = ModelConfig(num_scales=s, base_channels=8, norm_groups=2, window_rows=3)
        assert len(build(cfg, seed=0).adapters) == s


# ---------------------------------------------------------------- forward

def test_forward_shape_law():
    m = build(ModelConfig(), seed=0)
    out = m.forward_train(_x(0, (1, 4, 32, 32)))
    assert out.y_rgb.shape == (1, 3, 64, 64)
    assert out.y_raw.shape == (1, 4, 32, 32)


def test_forward_divisibility_error():
    m = build(ModelConfig(), seed=0)  # 3 scales -> extents must divide by 4
    with pytest.raises(DimensionError, match="divisible"):
        m.forward_train(_x(0, (1, 4, 30, 32)))


def test_infer_never_computes_raw():
    m = build(ModelConfig.tiny(), seed=1)
    assert m.forward_infer(_x(1, (1, 4, 16, 16))).shape == (1, 3, 32, 32)


def test_infer_bitwise_equals_train_rgb_ten_seeds():
    for s in range(10):
        m = build(ModelConfig.tiny(), seed=s)
        x = _x(100 + s, (1, 4, 16, 16))
        assert np.array_equal(m.forward_train(x).y_rgb.data,
                              m.forward_infer(x).data)


def test_train_graph_without_raw_supervision_has_no_y_raw():
    cfg = ModelConfig.tiny()
    cfg.use_raw_supervision = False
    out = build(cfg, seed=0).forward_train(_x(2, (1, 4, 16, 16)))
    assert out.y_raw is None


def test_adapter_bypass_wiring():
    """With use_adapter=False the sRGB decoder consumes encoder features
    directly: a hand-wired bypass gives the identical output."""
    cfg = ModelConfig(num_scales=2, base_channels=8, norm_groups=2, use_adapter=False)
    m = build(cfg, seed=3)
    x = _x(3, (1, 4, 16, 16))
    feats = m.encode(x)
    assert np.array_equal(m.decode_srgb(feats).data, m.forward_infer(x).data)


def test_encoder_called_once_per_train_forward():
    m = build(ModelConfig.tiny(), seed=0)
    m.forward_train(_x(4, (1, 4, 16, 16)))
    assert m.encoder_calls == 1
    m.forward_train(_x(5, (1, 4, 16, 16)))
    assert m.encoder_calls == 2


def test_ablation_matrix_is_pure_configuration():
    """The four adapter/raw-supervision variants differ only by config."""
    x = _x(6, (1, 4, 16, 16))
    outputs = []
    for use_adapter in (False, True):
        for use_raw in (False, True):
            cfg = ModelConfig(num_scales=2, base_channels=8, norm_groups=2,
                              window_rows=3, blocks_per_scale=1,
                              use_adapter=use_adapter, use_raw_supervision=use_raw)
            m = build(cfg, seed=9)
            out = m.forward_train(x)
            assert (out.y_raw is not None) == use_raw
            outputs.append(out.y_rgb.data)
    assert np.array_equal(outputs[0], outputs[1])      # raw branch leaves rgb alone
    assert not np.array_equal(outputs[0], outputs[2])  # adapter changes rgb


def test_end_to_end_tiny_gradcheck_f64():
    assert network_grad_error(seed=0) < 1e-4


# ------------------------------------------------------------- persistence

def test_save_load_roundtrip_bitwise(tmp_path):
    m = build(ModelConfig.tiny(), seed=4)
    x = _x(7, (1, 4, 16, 16))
    y0 = m.forward_infer(x).data
    path = tmp_path / "model.fdat"
    m.save(path)
    m2, header, _ = load(path)
    assert np.array_equal(m2.forward_infer(x).data, y0)
    assert header["config"] == m.config.to_dict()


def test_checkpoint_header_lists_every_parameter(tmp_path):
    m = build(ModelConfig.tiny(), seed=4)
    path = tmp_path / "model.fdat"
    m.save(path)
    raw = path.read_bytes()
    assert raw[:5] == CHECKPOINT_MAGIC
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hlen])
    names = {e["name"] for e in header["tensors"]}
    for pname, _ in m.named_parameters():
        assert f"model/{pname}" in names


def test_load_mismatched_config_names_tensor(tmp_path):
    m = build(ModelConfig.tiny(), seed=4)
    path = tmp_path / "model.fdat"
    m.save(path)
    other = build(ModelConfig(num_scales=2, base_channels=16, norm_groups=2,
                              window_rows=3, blocks_per_scale=1), seed=4)
    _, tensors = read_tensor_file(path, CHECKPOINT_MAGIC)
    with pytest.raises(FormatError, match="model/stem.weight"):
        other.load_state(tensors)


def test_gradient_topology_detach_probe():
    """Encoder gets gradients from both branches; detaching the features
    entering the raw decoder removes exactly the raw contribution."""
    m = build(ModelConfig.tiny(), seed=2)
    x = _x(8, (1, 4, 16, 16))
    t_rgb = Tensor(rng(9).normal(size=(1, 3, 32, 32)).astype(np.float32))
    t_raw = Tensor(rng(10).normal(size=(1, 4, 16, 16)).astype(np.float32))

    def encoder_grad(detach_raw: bool):
        m.zero_grad()
        with tape() as t:
            feats = m.encode(x)
            rgb = m.decode_srgb(m.adapt(feats))
            raw_in = [f.detach() for f in feats] if detach_raw else feats
            raw = m.decode_raw(raw_in)
            loss = ops.add(ops.l1_loss(rgb, t_rgb), ops.l1_loss(raw, t_raw))
            t.backward(loss)
        return m.stem.weight.grad.copy()

    g_both = encoder_grad(detach_raw=False)
    g_rgb_only = encoder_grad(detach_raw=True)
    assert np.any(g_both) and np.any(g_rgb_only)
    assert not np.array_equal(g_both, g_rgb_only)
