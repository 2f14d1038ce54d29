import numpy as np
import pytest

from linelight.analysis import (CONVENTION, FlopsReport, bench_scaling, count_flops,
                                fit_loglog_slope, linear_attention_macs,
                                naive_attention_macs)
from linelight.autodiff import rng
from linelight.blocks import Conv2d
from linelight.errors import DimensionError
from linelight.model import EnhancerNet, ModelConfig


def test_single_1x1_conv_closed_form():
    """1x1 conv on 1x4x8x8: exactly Cin * Cout * 64 MACs."""
    conv = Conv2d(rng(0), 4, 5, 1)
    assert conv.macs(8, 8) == 4 * 5 * 64


def test_attention_mac_formulas():
    assert linear_attention_macs(8, 16, 4) == 2 * 8 * 16 * 16
    assert naive_attention_macs(8, 16, 4, 3) == 2 * 8 * 16 * (3 * 16) * 4
    # linear count is independent of the window; naive grows with h*W
    assert naive_attention_macs(8, 16, 4, 5) / naive_attention_macs(8, 16, 4, 1) == 5
    ratio = naive_attention_macs(8, 16, 4, 5) / linear_attention_macs(8, 16, 4)
    assert ratio == 5 * 16 / 4


def test_report_totals_equal_sum_of_parts_any_order():
    m = EnhancerNet(ModelConfig.tiny(), seed=0)
    rep = count_flops(m, (1, 4, 32, 32))
    assert rep.train_total == sum(x[1] for x in rep.blocks)
    shuffled = FlopsReport(rep.input_shape, list(reversed(rep.blocks)),
                           rep.raw_in_train_graph)
    assert shuffled.train_total == rep.train_total
    assert shuffled.infer_total == rep.infer_total
    assert shuffled.param_total == rep.param_total


def test_infer_strictly_less_than_train():
    for cfg in (ModelConfig(), ModelConfig.tiny(), ModelConfig(adapter_kind="conv"),
                ModelConfig(adapter_kind="channel_attention"),
                ModelConfig(use_adapter=False)):
        m = EnhancerNet(cfg, seed=0)
        rep = count_flops(m, (1, 4, 32, 32))
        assert rep.infer_total < rep.train_total
        assert 0.0 < rep.raw_decoder_share < 1.0


def test_no_raw_supervision_train_equals_infer():
    cfg = ModelConfig.tiny()
    cfg.use_raw_supervision = False
    rep = count_flops(EnhancerNet(cfg, seed=0), (1, 4, 32, 32))
    assert rep.infer_total == rep.train_total
    assert rep.raw_decoder_share == 0.0


def test_disabling_adapter_removes_exactly_its_blocks():
    base = count_flops(EnhancerNet(ModelConfig(), seed=0), (1, 4, 32, 32))
    bare = count_flops(EnhancerNet(ModelConfig(use_adapter=False), seed=0), (1, 4, 32, 32))
    adapter_macs = base.section_total("adapter")
    adapter_params = sum(p for _, _, p, s in base.blocks if s == "adapter")
    assert base.train_total - bare.train_total == adapter_macs
    assert base.param_total - bare.param_total == adapter_params
    assert adapter_macs > 0


def test_param_total_matches_model():
    m = EnhancerNet(ModelConfig(), seed=0)
    rep = count_flops(m, (1, 4, 32, 32))
    assert rep.param_total == m.param_count()


def test_default_config_documented_numbers():
    """The README quotes these; enumeration must keep producing them."""
    m = EnhancerNet(ModelConfig(), seed=0)
    assert m.param_count() == 162_563
    rep = count_flops(m, (1, 4, 256, 256))
    ratio = rep.infer_total / rep.train_total
    print(f"\ndefault config 4x256x256: infer/train MAC ratio {ratio:.4f}, "
          f"raw decoder share {rep.raw_decoder_share:.4f}")
    assert ratio == pytest.approx(0.7335, abs=0.02)


def test_batch_multiplies_macs_not_params():
    m = EnhancerNet(ModelConfig.tiny(), seed=0)
    r1 = count_flops(m, (1, 4, 32, 32))
    r3 = count_flops(m, (3, 4, 32, 32))
    assert r3.train_total == 3 * r1.train_total
    assert r3.param_total == r1.param_total


def test_divisibility_checked():
    with pytest.raises(DimensionError):
        count_flops(EnhancerNet(ModelConfig(), seed=0), (1, 4, 30, 32))


def test_report_serialization():
    rep = count_flops(EnhancerNet(ModelConfig.tiny(), seed=0), (1, 4, 16, 16))
    doc = rep.to_dict()
    assert doc["convention"] == CONVENTION
    assert doc["train_total_macs"] == rep.train_total
    table = rep.format_table()
    assert "inference total" in table and "stem" in table


def test_bench_rows_have_schema_and_positive_medians():
    rows = bench_scaling("linear", [(8, 8), (16, 16)], channels=4, window_rows=3,
                         repeats=5, seed=0)
    assert len(rows) == 2
    for r in rows:
        assert set(r) == {"impl", "H", "W", "C", "h", "wall_ns", "flops"}
        assert r["wall_ns"] > 0
    slope = fit_loglog_slope(rows)
    assert np.isfinite(slope)


def test_bench_full_window_uses_odd_height():
    rows = bench_scaling("naive", [(8, 8), (9, 9)], channels=2, window_rows=None,
                         repeats=5, seed=0)
    assert rows[0]["h"] == 7 and rows[1]["h"] == 9
