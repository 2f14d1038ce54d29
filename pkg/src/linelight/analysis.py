"""FLOPs/parameter accounting and attention scaling benchmarks.

Counting convention: FLOPs are reported as MACs, one multiply-add counted
once; normalizations count one per element.  The absolute numbers matter
less than the relationships they establish (inference strictly cheaper than
training, adapter cost enumerable, attention cost independent of the window
height in the factorized form).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import attention
from .autodiff import rng
from .model import EnhancerNet

CONVENTION = "FLOPs = MACs (one multiply-add counted once); norms linear in elements"


def linear_attention_macs(h: int, w: int, c: int) -> int:
    """Row aggregates (H*W*C^2) plus per-row application (H*W*C^2)."""
    return 2 * h * w * c * c


def naive_attention_macs(h: int, w: int, c: int, window_rows: int) -> int:
    """Per-pixel scores against an h*W key window, then value mixing."""
    return 2 * h * w * (window_rows * w) * c


@dataclass
class FlopsReport:
    input_shape: tuple
    blocks: list[tuple[str, int, int, str]]  # (name, macs, params, section)
    raw_in_train_graph: bool
    convention: str = CONVENTION

    def section_total(self, section: str) -> int:
        return sum(m for _, m, _, s in self.blocks if s == section)

    @property
    def train_total(self) -> int:
        skip = () if self.raw_in_train_graph else ("raw_decoder",)
        return sum(m for _, m, _, s in self.blocks if s not in skip)

    @property
    def infer_total(self) -> int:
        return sum(m for _, m, _, s in self.blocks if s != "raw_decoder")

    @property
    def param_total(self) -> int:
        return sum(p for _, _, p, _ in self.blocks)

    @property
    def raw_decoder_share(self) -> float:
        """Fraction of the train-graph MACs spent in the raw decoder."""
        if not self.raw_in_train_graph or self.train_total == 0:
            return 0.0
        return self.section_total("raw_decoder") / self.train_total

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "input_shape": list(self.input_shape),
            "blocks": [
                {"name": n, "macs": m, "params": p, "section": s}
                for n, m, p, s in self.blocks
            ],
            "train_total_macs": self.train_total,
            "infer_total_macs": self.infer_total,
            "param_total": self.param_total,
            "raw_decoder_share": self.raw_decoder_share,
        }

    def format_table(self) -> str:
        lines = [f"# {self.convention}",
                 f"# input shape {self.input_shape}",
                 f"{'block':<24} {'section':<14} {'MACs':>14} {'params':>10}"]
        for name, macs, params, section in self.blocks:
            lines.append(f"{name:<24} {section:<14} {macs:>14,} {params:>10,}")
        lines.append("-" * 66)
        lines.append(f"{'train total':<39} {self.train_total:>14,} {self.param_total:>10,}")
        lines.append(f"{'inference total':<39} {self.infer_total:>14,}")
        if self.raw_in_train_graph:
            ratio = self.infer_total / self.train_total
            lines.append(f"inference/train ratio {ratio:.4f}  "
                         f"(raw decoder share {self.raw_decoder_share:.4f})")
        return "\n".join(lines)


def count_flops(model: EnhancerNet, input_shape: tuple) -> FlopsReport:
    """Analytic per-block MAC and parameter counts for one input shape."""
    if len(input_shape) == 4:
        n, _, h, w = input_shape
    else:
        _, h, w = input_shape
        n = 1
    div = 1 << (model.config.num_scales - 1)
    if h % div or w % div:
        from .errors import DimensionError

        raise DimensionError(
            f"input {h}x{w} not divisible by 2^(num_scales-1)={div} (axes 2,3)")
    blocks = [(name, n * macs, params, section)
              for name, macs, params, section in model.enumerate_blocks(h, w)]
    return FlopsReport(input_shape=tuple(input_shape), blocks=blocks,
                       raw_in_train_graph=model.config.use_raw_supervision)


# ---------------------------------------------------------------------------
# scaling benchmarks

def _kernel(impl: str):
    if impl == "naive":
        return lambda q, k, v, win: attention.line_attention_naive(q, k, v, win)
    if impl == "linear":
        return lambda q, k, v, win: attention.line_attention_linear(q, k, v, win)
    if impl == "streaming":
        return lambda q, k, v, win: attention.streaming_attention_image(
            q[0], k[0], v[0], win)
    from .errors import ConfigurationError

    raise ConfigurationError(f"unknown attention impl {impl!r}")


def bench_scaling(impl: str, sizes: list[tuple[int, int]], channels: int,
                  window_rows: int | None, repeats: int = 5, seed: int = 0,
                  min_measure_ns: float = 8e6) -> list[dict]:
    """Median wall time per (H, W); window_rows=None means full height.

    Each timed repeat loops the kernel until it covers min_measure_ns, so
    small shapes are not dominated by timer granularity.
    """
    if repeats < 5:
        repeats = 5
    run = _kernel(impl)
    rows = []
    for h, w in sizes:
        win = window_rows if window_rows is not None else (h if h % 2 else h - 1)
        gen = rng(seed)
        q, k, v = (gen.normal(size=(1, channels, h, w)).astype(np.float32)
                   for _ in range(3))
        t0 = time.perf_counter_ns()
        run(q, k, v, win)  # warmup doubles as loop-count calibration
        once = max(time.perf_counter_ns() - t0, 1)
        loops = max(1, int(min_measure_ns // once))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            for _ in range(loops):
                run(q, k, v, win)
            times.append((time.perf_counter_ns() - t0) / loops)
        flops = (naive_attention_macs(h, w, channels, win) if impl == "naive"
                 else linear_attention_macs(h, w, channels))
        rows.append({"impl": impl, "H": h, "W": w, "C": channels, "h": win,
                     "wall_ns": float(np.median(times)), "flops": flops})
    return rows


def fit_loglog_slope(rows: list[dict]) -> float:
    """Least-squares slope of log(wall time) against log(pixel count)."""
    xs = np.log([r["H"] * r["W"] for r in rows])
    ys = np.log([r["wall_ns"] for r in rows])
    return float(np.polyfit(xs, ys, 1)[0])


def stable_slope(impl: str, sizes: list[tuple[int, int]], channels: int,
                 window_rows: int | None, repeats: int = 5, fits: int = 3) -> float:
    """Median of several independent sweep fits; robust to one noisy sweep."""
    run = _kernel(impl)
    h, w = sizes[-1]
    gen = rng(0)
    warm = tuple(gen.normal(size=(1, channels, h, w)).astype(np.float32)
                 for _ in range(3))
    win = window_rows if window_rows is not None else (h if h % 2 else h - 1)
    run(*warm, win)  # cold-start caches before any timed sweep
    slopes = [fit_loglog_slope(bench_scaling(impl, sizes, channels, window_rows,
                                             repeats=repeats, seed=i))
              for i in range(fits)]
    return float(np.median(slopes))
