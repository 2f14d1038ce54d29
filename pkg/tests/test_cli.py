import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from linelight.cli import ManifestDataset, main
from linelight.fileio import read_raw_tensor


def _dir_digest(root: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.iterdir())}


def test_synth_deterministic_byte_identical(tmp_path):
    for name in ("a", "b"):
        rc = main(["synth", "--out", str(tmp_path / name), "--count", "4",
                   "--size", "32x32", "--seed", "1"])
        assert rc == 0
    assert _dir_digest(tmp_path / "a") == _dir_digest(tmp_path / "b")


def test_synth_manifest_lists_exactly_n(tmp_path):
    main(["synth", "--out", str(tmp_path / "d"), "--count", "5",
          "--size", "32x32", "--seed", "2"])
    doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(doc["samples"]) == 5
    ds = ManifestDataset(tmp_path / "d")
    assert len(ds) == 5
    pair = ds[0]
    assert pair.x.shape == (4, 16, 16) and pair.y_rgb.shape == (3, 32, 32)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One small CLI training run shared by the infer tests."""
    root = tmp_path_factory.mktemp("cli_run")
    data = root / "data"
    out = root / "run"
    main(["synth", "--out", str(data), "--count", "4", "--size", "64x64",
          "--seed", "3"])
    cfg = {"model": {"num_scales": 2, "base_channels": 8, "blocks_per_scale": 1,
                     "window_rows": 3, "norm_groups": 2},
           "train": {"steps": 12, "eval_every": 6, "seed": 4, "crop": 16,
                     "lr": 1e-3}}
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["train", "--data", str(data), "--config", str(cfg_path),
               "--out", str(out)])
    assert rc == 0
    ckpt = out / "ckpt_000012.fdat"
    assert ckpt.exists()
    return {"data": data, "ckpt": ckpt, "root": root}


def test_train_writes_metrics_and_checkpoints(trained_run):
    lines = (trained_run["root"] / "run" / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "step,loss_total,loss_rgb,loss_raw,psnr"
    assert len(lines) == 13


def test_infer_writes_result_and_preview(trained_run, capsys):
    out = trained_run["root"] / "pred.fraw"
    rc = main(["infer", "--ckpt", str(trained_run["ckpt"]),
               "--input", str(trained_run["data"] / "sample_0000_x.fraw"),
               "--out", str(out),
               "--reference", str(trained_run["data"] / "sample_0000_yrgb.fraw")])
    assert rc == 0
    assert "psnr vs reference" in capsys.readouterr().out
    pred, _ = read_raw_tensor(out)
    assert pred.shape == (3, 64, 64)
    assert Path(str(out) + ".ppm").read_bytes().startswith(b"P6\n64 64\n255\n")


def test_infer_streaming_matches_default(trained_run):
    base = trained_run["root"] / "pred_a.fraw"
    stream = trained_run["root"] / "pred_b.fraw"
    x = str(trained_run["data"] / "sample_0001_x.fraw")
    assert main(["infer", "--ckpt", str(trained_run["ckpt"]), "--input", x,
                 "--out", str(base)]) == 0
    assert main(["infer", "--ckpt", str(trained_run["ckpt"]), "--input", x,
                 "--out", str(stream), "--streaming"]) == 0
    a, _ = read_raw_tensor(base)
    b, _ = read_raw_tensor(stream)
    assert np.abs(a - b).max() < 1e-5


def test_infer_missing_checkpoint_exits_3(trained_run, capsys):
    rc = main(["infer", "--ckpt", str(trained_run["root"] / "absent.fdat"),
               "--input", str(trained_run["data"] / "sample_0000_x.fraw"),
               "--out", str(trained_run["root"] / "x.fraw")])
    assert rc == 3


def test_train_resume_continues(trained_run, tmp_path):
    cfg = {"model": {"num_scales": 2, "base_channels": 8, "blocks_per_scale": 1,
                     "window_rows": 3, "norm_groups": 2},
           "train": {"steps": 16, "eval_every": 8, "seed": 4, "crop": 16,
                     "lr": 1e-3}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["train", "--data", str(trained_run["data"]), "--config", str(cfg_path),
               "--out", str(tmp_path / "resumed"),
               "--resume", str(trained_run["ckpt"])])
    assert rc == 0
    assert (tmp_path / "resumed" / "ckpt_000016.fdat").exists()


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    """A real CLI smoke training: long enough that enhancement beats the
    amplified-noisy baseline."""
    root = tmp_path_factory.mktemp("cli_smoke")
    data = root / "data"
    main(["synth", "--out", str(data), "--count", "32", "--size", "64x64",
          "--seed", "5"])
    cfg = {"model": {"num_scales": 2, "base_channels": 8, "blocks_per_scale": 1,
                     "window_rows": 3, "norm_groups": 2},
           "train": {"steps": 500, "eval_every": 250, "seed": 9, "crop": 32,
                     "lr": 1e-3}}
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--data", str(data), "--config", str(cfg_path),
                 "--out", str(root / "run")]) == 0
    return {"data": data, "ckpt": root / "run" / "ckpt_000500.fdat", "root": root}


def test_smoke_enhancement_beats_noisy_baseline(smoke_run, capsys):
    """The trained checkpoint renders sample 0 closer to the clean sRGB than
    the amplified noisy input pushed through the ISP alone."""
    from linelight.rawdata import simple_isp
    from linelight.training import psnr

    out = smoke_run["root"] / "enhanced.fraw"
    rc = main(["infer", "--ckpt", str(smoke_run["ckpt"]),
               "--input", str(smoke_run["data"] / "sample_0000_x.fraw"),
               "--out", str(out),
               "--reference", str(smoke_run["data"] / "sample_0000_yrgb.fraw")])
    assert rc == 0
    capsys.readouterr()
    pred, _ = read_raw_tensor(out)
    x, _ = read_raw_tensor(smoke_run["data"] / "sample_0000_x.fraw")
    clean, _ = read_raw_tensor(smoke_run["data"] / "sample_0000_yrgb.fraw")
    model_psnr = psnr(pred, clean)
    baseline_psnr = psnr(simple_isp(x), clean)
    print(f"\nsmoke: model {model_psnr:.2f} dB vs baseline {baseline_psnr:.2f} dB")
    assert model_psnr > baseline_psnr


def test_flops_json(capsys):
    rc = main(["flops", "--size", "32x32", "--json"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["infer_total_macs"] < doc["train_total_macs"]


def test_bench_csv_schema(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    rc = main(["bench", "--impl", "linear", "--sizes", "8,16", "--channels", "4",
               "--window", "3", "--repeats", "5", "--csv", str(csv_path)])
    assert rc == 0
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0] == "impl,H,W,C,h,wall_ns,flops"
    assert len(lines) == 3


def test_check_quick_passes_within_budget(capsys):
    import time

    t0 = time.time()
    rc = main(["check", "--level", "quick"])
    dt = time.time() - t0
    out = capsys.readouterr().out
    assert rc == 0
    assert dt < 60
    # the report enumerates named module invariants, one line each
    assert out.count("[PASS]") >= 25
    for expected in ("attention_equiv_linear_f64", "streaming_peak_state_law",
                     "op_gradients_f64", "noise_mean_variance_moments",
                     "gradient_flow_topology", "adamw_hand_formula"):
        assert expected in out


def test_bad_config_file_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["flops", "--config", str(bad), "--size", "32x32"])
    assert rc == 3


def test_bad_size_argument_exits_3(capsys):
    assert main(["flops", "--size", "32by32"]) == 3
