"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and measured values.
"""

import time

import numpy as np
import pytest

from linelight.analysis import count_flops, stable_slope
from linelight.attention import line_attention_linear, streaming_attention_image
from linelight.autodiff import Tensor, rng
from linelight.model import EnhancerNet, ModelConfig
from linelight.rawdata import (NoiseModel, SyntheticDataset, add_low_light_noise,
                               BayerFrame, bayer_pack, bayer_unpack, sample_pair)
from linelight.training import AdamW, TrainConfig, train
from linelight.verify import (brute_line_attention, chk_block_gradients,
                              chk_op_gradients, chk_streaming_buffer_law,
                              network_grad_error)


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def test_criterion_1_attention_equivalence():
    """Linear and streaming match the triple-loop oracle, f64 1e-10 / f32 1e-5."""
    t0 = time.time()
    cases = []
    seed = 0
    for c in (2, 4, 8):                       # spans C in {2,4,8}
        for h, w in ((4, 5), (5, 4), (7, 9), (9, 7), (11, 6), (16, 4), (5, 16)):
            wins = [1, 3, 5] + ([h] if h % 2 else [h - 1])   # h in {1,3,5,~H}
            cases.append((seed, c, h, w, wins[seed % len(wins)]))
            seed += 1
    assert len(cases) >= 20
    worst64 = worst32 = 0.0
    for s, c, h, w, win in cases:
        gen = rng(5000 + s)
        q, k, v = (gen.normal(size=(1, c, h, w)) for _ in range(3))
        oracle = brute_line_attention(q, k, v, win)
        scale = max(np.abs(oracle).max(), 1.0)
        lin64 = line_attention_linear(q, k, v, win)
        str64 = streaming_attention_image(q[0], k[0], v[0], win)[None]
        worst64 = max(worst64, np.abs(lin64 - oracle).max() / scale,
                      np.abs(str64 - oracle).max() / scale)
        q32, k32, v32 = (a.astype(np.float32) for a in (q, k, v))
        lin32 = line_attention_linear(q32, k32, v32, win)
        str32 = streaming_attention_image(q32[0], k32[0], v32[0], win)[None]
        worst32 = max(worst32, np.abs(lin32 - oracle).max() / scale,
                      np.abs(str32 - oracle).max() / scale)
    dt = time.time() - t0
    ok = worst64 < 1e-10 and worst32 < 1e-5 and dt < 30
    _report("criterion 1 (attention equivalence)", ok,
            f"{len(cases)} cases, f64 err {worst64:.2e} < 1e-10, "
            f"f32 err {worst32:.2e} < 1e-5, {dt:.1f}s < 30s")


def test_criterion_2_gradient_correctness():
    """Every op, every block and the full tiny network pass f64 checks."""
    t0 = time.time()
    results = chk_op_gradients(True) + chk_block_gradients(True)
    net_err = network_grad_error(seed=0)
    dt = time.time() - t0
    ok = all(r.passed for r in results) and net_err < 1e-4 and dt < 300
    detail = "; ".join(f"{r.name}={r.measured}" for r in results)
    _report("criterion 2 (gradient correctness)", ok,
            f"{detail}; network={net_err:.2e} < 1e-4; {dt:.1f}s < 5min")


def test_criterion_3_complexity_claim():
    """Linear slope vs pixel count in [0.8, 1.3]; full-height naive >= 1.7."""
    t0 = time.time()
    lin_slope = stable_slope("linear",
                             [(s, s) for s in (64, 96, 128, 160, 192, 224, 256)],
                             channels=32, window_rows=7, repeats=5)
    naive_slope = stable_slope("naive", [(23, 23), (31, 31), (47, 47), (63, 63)],
                               channels=16, window_rows=None, repeats=5)
    dt = time.time() - t0
    ok = 0.8 <= lin_slope <= 1.3 and naive_slope >= 1.7 and dt < 300
    _report("criterion 3 (O(n) complexity claim)", ok,
            f"linear slope {lin_slope:.3f} in [0.8, 1.3]; "
            f"naive h=H slope {naive_slope:.3f} >= 1.7; {dt:.1f}s < 5min")


def test_criterion_4_line_buffer_claim():
    """Streaming peak state is exactly min(h,H)*C^2 + C^2, independent of H."""
    res = chk_streaming_buffer_law(True)[0]
    _report("criterion 4 (line-buffer occupancy)", res.passed,
            f"{res.detail}, expected {res.tolerance}")


def test_criterion_5_inference_efficiency():
    """Inference output bitwise equals the train-graph sRGB; fewer FLOPs."""
    bitwise = True
    for s in range(10):
        m = EnhancerNet(ModelConfig.tiny(), seed=s)
        x = Tensor(rng(900 + s).normal(size=(1, 4, 16, 16)).astype(np.float32))
        bitwise = bitwise and np.array_equal(m.forward_train(x).y_rgb.data,
                                             m.forward_infer(x).data)
    shares = []
    flops_ok = True
    for cfg in (ModelConfig(), ModelConfig.tiny(), ModelConfig(adapter_kind="conv"),
                ModelConfig(adapter_kind="channel_attention"),
                ModelConfig(use_adapter=False)):
        rep = count_flops(EnhancerNet(cfg, seed=0), (1, 4, 32, 32))
        flops_ok = flops_ok and rep.infer_total < rep.train_total
        shares.append(rep.raw_decoder_share)
    ok = bitwise and flops_ok
    _report("criterion 5 (inference efficiency)", ok,
            f"y_rgb bitwise equal on 10 seeds; infer < train on 5 configs; "
            f"raw-decoder share {min(shares):.3f}..{max(shares):.3f}")


def test_criterion_6_dual_supervision_topology():
    """Gradient routing per branch, and a frozen raw decoder when disabled."""
    from linelight.verify import chk_gradient_topology, chk_raw_branch_frozen

    topo = chk_gradient_topology(True)[0]
    frozen = chk_raw_branch_frozen(True)[0]  # 100 training steps
    ok = topo.passed and frozen.passed
    _report("criterion 6 (dual-supervision topology)", ok,
            f"{topo.detail}; raw decoder bitwise unchanged over 100 steps")


def test_criterion_7_training_smoke():
    """500 steps on 32 synthetic samples halve the combined loss; the four
    ablation variants train cleanly to distinct losses."""
    t0 = time.time()
    ds = SyntheticDataset(seed=5, count=32)
    model = EnhancerNet(ModelConfig.tiny(), seed=3)
    res = train(model, ds, TrainConfig(steps=500, eval_every=250, seed=9))
    first = float(np.mean([r["loss_total"] for r in res.metrics[:10]]))
    last = float(np.mean([r["loss_total"] for r in res.metrics[-10:]]))
    drop_ok = last <= 0.5 * first

    finals = []
    for use_adapter in (False, True):
        for use_raw in (False, True):
            cfg = ModelConfig.tiny()
            cfg.use_adapter = use_adapter
            cfg.use_raw_supervision = use_raw
            variant = train(EnhancerNet(cfg, seed=3), ds,
                            TrainConfig(steps=80, eval_every=80, seed=9))
            finals.append(variant.metrics[-1]["loss_total"])
    distinct = len(set(finals)) == 4
    dt = time.time() - t0
    ok = drop_ok and distinct and dt < 900
    _report("criterion 7 (training smoke + ablation harness)", ok,
            f"loss {first:.4f} -> {last:.4f} ({last / first:.1%} of start, needs <=50%); "
            f"4 variant losses {['%.4f' % f for f in finals]}; {dt:.0f}s < 15min")


def test_criterion_8_raw_pipeline():
    """Pack/unpack bijection, noise moments within 10%, byte-exact dataset."""
    bijection = True
    for s in range(100):
        gen = rng(s)
        h, w = 2 * int(gen.integers(1, 20)), 2 * int(gen.integers(1, 20))
        mosaic = gen.random((h, w)).astype(np.float32)
        bijection = bijection and np.array_equal(bayer_unpack(bayer_pack(mosaic)), mosaic)

    level, dim = 0.5, 0.25
    nm = NoiseModel(photon_scale=400.0, read_sigma=0.01, seed=123)
    noisy = add_low_light_noise(BayerFrame(np.full((128, 160), level, np.float32)),
                                nm, dim)
    mean_err = abs(noisy.data.mean() - level * dim) / (level * dim)
    var_expect = level * dim / nm.photon_scale + nm.read_sigma ** 2
    var_err = abs(noisy.data.var() - var_expect) / var_expect

    pairs = [sample_pair(31, i, 32, 32) for i in range(3)]
    repeat = [sample_pair(31, i, 32, 32) for i in range(3)]
    identical = all(np.array_equal(a.x, b.x) and np.array_equal(a.y_rgb, b.y_rgb)
                    and np.array_equal(a.y_raw, b.y_raw)
                    for a, b in zip(pairs, repeat))
    ok = bijection and mean_err < 0.1 and var_err < 0.1 and identical
    _report("criterion 8 (raw pipeline)", ok,
            f"bijection on 100 frames; moments mean_err={mean_err:.3f} "
            f"var_err={var_err:.3f} < 0.10; dataset byte-exact={identical}")


def test_criterion_9_optimizer():
    """AdamW matches the hand f64 formula to 1e-12; defaults as published."""
    lr, b1, b2, eps, wd = 2e-4, 0.9, 0.99, 1e-8, 1e-4
    p0, g = 0.73, -0.41
    p = Tensor(np.array([p0]), requires_grad=True)
    p.grad = np.array([g])
    opt = AdamW([("p", p)], lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    opt.step()
    expect = p0 - lr * wd * p0
    m_h = (1 - b1) * g
    v_h = (1 - b2) * g * g
    expect -= lr * (m_h / (1 - b1)) / (np.sqrt(v_h / (1 - b2)) + eps)
    err = abs(float(p.data[0]) - expect)

    cfg = TrainConfig()
    defaults_ok = (cfg.lr == 2e-4 and cfg.beta1 == 0.9 and cfg.beta2 == 0.99
                   and cfg.batch_size == 1)
    ok = err < 1e-12 and defaults_ok
    _report("criterion 9 (optimizer)", ok,
            f"hand-formula err {err:.2e} < 1e-12; defaults lr=2e-4 "
            f"beta1=0.9 beta2=0.99 batch=1: {defaults_ok}")
