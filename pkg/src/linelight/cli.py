"""Command line interface.

Subcommands: synth (dataset generation), train, infer, check (verification
suites), bench (attention scaling), flops (accounting).  Exit codes:
0 success, 1 verification failure, 2 I/O error, 3 format/compatibility
error.  Config precedence is flags > config file > defaults, and the
effective configuration is printed at startup.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import bench_scaling, count_flops, fit_loglog_slope
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, FormatError, LineLightError
from .fileio import read_manifest, read_raw_tensor, write_manifest, write_ppm, write_raw_tensor
from .model import EnhancerNet, ModelConfig, load
from .rawdata import SamplePair, sample_pair
from .training import TrainConfig, psnr, train
from .verify import run_checks

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_IO = 2
EXIT_FORMAT = 3


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError as e:
        raise ConfigurationError(f"size must look like 128x128, got {text!r}") from e
    return h, w


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h, w = _parse_size(args.size)
    samples = []
    for i in range(args.count):
        pair = sample_pair(args.seed, i, h, w)
        names = {
            "x": f"sample_{i:04d}_x.fraw",
            "y_raw": f"sample_{i:04d}_yraw.fraw",
            "y_rgb": f"sample_{i:04d}_yrgb.fraw",
        }
        write_raw_tensor(out / names["x"], pair.x, pattern="RGGB", ratio=pair.ratio)
        write_raw_tensor(out / names["y_raw"], pair.y_raw, pattern="RGGB", ratio=1.0)
        write_raw_tensor(out / names["y_rgb"], pair.y_rgb, pattern=None, ratio=None)
        samples.append({**names, "ratio": pair.ratio})
    write_manifest(out / "manifest.json", samples,
                   meta={"seed": args.seed, "count": args.count, "size": [h, w]})
    print(f"wrote {args.count} samples to {out}")
    return EXIT_OK


class ManifestDataset:
    """Dataset reading sample triples listed in a synth manifest."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = read_manifest(self.root / "manifest.json")
        self.samples = manifest["samples"]

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> SamplePair:
        entry = self.samples[i]
        x, header = read_raw_tensor(self.root / entry["x"])
        y_raw, _ = read_raw_tensor(self.root / entry["y_raw"])
        y_rgb, _ = read_raw_tensor(self.root / entry["y_rgb"])
        return SamplePair(x=x, y_raw=y_raw, y_rgb=y_rgb,
                          ratio=float(header.get("ratio") or 1.0))


def _load_config_file(path) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"config file is not valid JSON: {e}") from e
    return doc.get("model", {}), doc.get("train", {})


def cmd_train(args) -> int:
    model_over, train_over = _load_config_file(args.config)
    # precedence: flags > config file > defaults
    for flag, key in (("steps", "steps"), ("seed", "seed"), ("lr", "lr"),
                      ("batch_size", "batch_size")):
        val = getattr(args, flag)
        if val is not None:
            train_over[key] = val
    mcfg = ModelConfig.from_dict(model_over)
    tcfg = TrainConfig.from_dict(train_over)
    print("model config:", json.dumps(mcfg.to_dict()))
    print("train config:", json.dumps(tcfg.to_dict()))
    dataset = ManifestDataset(args.data)
    if args.resume:
        model, _, _ = load(args.resume)
        result = train(model, dataset, tcfg, out_dir=args.out, resume=args.resume, log=True)
    else:
        model = EnhancerNet(mcfg, seed=tcfg.seed)
        result = train(model, dataset, tcfg, out_dir=args.out, log=True)
    print(f"final checkpoint: {result.checkpoint}")
    print(f"metrics: {Path(args.out) / 'metrics.csv'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise FormatError(f"checkpoint not found: {ckpt}")
    model, _, _ = load(ckpt)
    x, header = read_raw_tensor(args.input)
    if x.ndim != 3 or x.shape[0] != 4:
        raise FormatError(f"input must be packed raw (4, H, W), got {x.shape}")
    y = model.forward_infer(Tensor(x[None]), streaming=args.streaming).data[0]
    write_raw_tensor(args.out, y, pattern=None, ratio=None)
    preview = Path(str(args.out) + ".ppm")
    write_ppm(preview, y)
    print(f"wrote {args.out} and preview {preview}")
    if args.reference:
        ref, _ = read_raw_tensor(args.reference)
        print(f"psnr vs reference: {psnr(y, ref):.2f} dB")
    return EXIT_OK


def cmd_check(args) -> int:
    _, ok = run_checks(args.level)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_bench(args) -> int:
    impls = ["naive", "linear", "streaming"] if args.impl == "all" else [args.impl]
    sizes = [(int(s), int(s)) for s in args.sizes.split(",")]
    all_rows = []
    for impl in impls:
        window = None if args.window == "full" else int(args.window)
        all_rows += bench_scaling(impl, sizes, channels=args.channels,
                                  window_rows=window, repeats=args.repeats,
                                  seed=args.seed)
    header = "impl,H,W,C,h,wall_ns,flops"
    lines = [header] + [
        f"{r['impl']},{r['H']},{r['W']},{r['C']},{r['h']},{int(r['wall_ns'])},{r['flops']}"
        for r in all_rows]
    csv_text = "\n".join(lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(csv_text)
        print(f"wrote {args.csv}")
    summary = {}
    for impl in impls:
        rows = [r for r in all_rows if r["impl"] == impl]
        if len(rows) >= 2:
            summary[impl] = fit_loglog_slope(rows)
    if args.json:
        print(json.dumps({"rows": all_rows, "loglog_slope_vs_pixels": summary}))
    else:
        if not args.csv:
            print(csv_text, end="")
        for impl, slope in summary.items():
            print(f"# {impl}: log-log slope vs pixel count = {slope:.3f}")
    return EXIT_OK


def cmd_flops(args) -> int:
    model_over, _ = _load_config_file(args.config)
    cfg = ModelConfig.from_dict(model_over)
    h, w = _parse_size(args.size)
    model = EnhancerNet(cfg, seed=0)
    report = count_flops(model, (1, 4, h, w))
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(report.format_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linelight",
                                description="low-light raw enhancement toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=32)
    s.add_argument("--size", default="128x128", help="mosaic HxW (even)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train on a synth dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="JSON {model: {...}, train: {...}}")
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--resume", default=None)
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="enhance one packed raw tensor file")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--streaming", action="store_true",
                   help="run the adapters through the line-buffer executor")
    i.add_argument("--reference", default=None, help="optional clean sRGB for PSNR")
    i.set_defaults(fn=cmd_infer)

    c = sub.add_parser("check", help="run the verification suites")
    c.add_argument("--level", choices=("quick", "full"), default="quick")
    c.set_defaults(fn=cmd_check)

    b = sub.add_parser("bench", help="attention scaling benchmark")
    b.add_argument("--impl", choices=("naive", "linear", "streaming", "all"),
                   default="linear")
    b.add_argument("--sizes", default="64,96,128,192,256", help="square sides, comma list")
    b.add_argument("--channels", type=int, default=32)
    b.add_argument("--window", default="7", help="window rows, or 'full' for h=H")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv", default=None)
    b.add_argument("--json", action="store_true")
    b.set_defaults(fn=cmd_bench)

    f = sub.add_parser("flops", help="per-block MAC and parameter report")
    f.add_argument("--config", default=None)
    f.add_argument("--size", default="256x256", help="packed input HxW")
    f.add_argument("--json", action="store_true")
    f.set_defaults(fn=cmd_flops)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FormatError, ConfigurationError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except LineLightError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
