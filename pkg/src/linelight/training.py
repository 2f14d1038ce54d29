"""Optimization loop: combined L1 loss over both branches, AdamW updates,
CSV metrics, and resumable checkpoints.

Everything is a pure function of (model seed, data seed, config): samples are
indexed, crops are derived from the step number, and the optimizer state is
checkpointed, so a resumed run continues the loss trajectory bit-identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import Tensor, rng, tape
from .errors import ConfigurationError, TrainingError
from .model import EnhancerNet, NetworkOutputs
from .rawdata import SamplePair

PSNR_CAP_DB = 99.0
METRICS_FIELDS = ("step", "loss_total", "loss_rgb", "loss_raw", "psnr")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 1e-4
    steps: int = 500
    batch_size: int = 1
    eval_every: int = 100
    seed: int = 0
    lambda_rgb: float = 1.0
    lambda_raw: float = 1.0
    crop: int | None = 64

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1), got {b}")
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigurationError("steps, batch_size and eval_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config fields: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at the 99 dB identical-input sentinel."""
    if pred.shape != target.shape:
        raise ConfigurationError(f"psnr shapes differ: {pred.shape} vs {target.shape}")
    if peak <= 0:
        raise ConfigurationError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((pred.astype(np.float64) - target.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def combined_loss(out: NetworkOutputs, target_rgb: Tensor, target_raw: Tensor | None,
                  lambda_rgb: float = 1.0, lambda_raw: float = 1.0,
                  ) -> tuple[Tensor, float, float | None]:
    """lambda_rgb * L1(rgb) + lambda_raw * L1(raw); the raw term exists only
    when the network produced a raw prediction."""
    loss_rgb = ops.l1_loss(out.y_rgb, target_rgb)
    total = ops.scale(loss_rgb, lambda_rgb)
    raw_val = None
    if out.y_raw is not None:
        if target_raw is None:
            raise ConfigurationError("network produced a raw prediction but no raw target given")
        loss_raw = ops.l1_loss(out.y_raw, target_raw)
        raw_val = loss_raw.item()
        total = ops.add(total, ops.scale(loss_raw, lambda_raw))
    return total, loss_rgb.item(), raw_val


class AdamW:
    """Adam with decoupled weight decay applied directly to the parameters."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.named_params = list(named_params)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self) -> None:
        """One update over all parameters that received gradients."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r} at step {t}")
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_entries(self) -> list[tuple[str, np.ndarray]]:
        entries = [("opt/step", np.array([float(self.step_count)], np.float32))]
        for name, _ in self.named_params:
            entries.append((f"opt/m/{name}", self.m[name].astype(np.float32)))
            entries.append((f"opt/v/{name}", self.v[name].astype(np.float32)))
        return entries

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self.step_count = int(round(float(tensors["opt/step"][0])))
        for name, p in self.named_params:
            self.m[name] = tensors[f"opt/m/{name}"].astype(p.dtype)
            self.v[name] = tensors[f"opt/v/{name}"].astype(p.dtype)


def _epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    return rng(np.random.SeedSequence([seed, 11, epoch])).permutation(count)


def sample_index(seed: int, count: int, position: int) -> int:
    """Global position -> dataset index, reshuffled each wrap, seeded."""
    epoch, offset = divmod(position, count)
    return int(_epoch_order(seed, epoch, count)[offset])


def _crop_pair(pair: SamplePair, crop: int | None, seed: int, step: int,
               item: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, ph, pw = pair.x.shape
    if crop is None or (ph <= crop and pw <= crop):
        return pair.x, pair.y_raw, pair.y_rgb
    gen = rng(np.random.SeedSequence([seed, 13, step, item]))
    top = int(gen.integers(0, ph - crop + 1))
    left = int(gen.integers(0, pw - crop + 1))
    x = pair.x[:, top:top + crop, left:left + crop]
    y_raw = pair.y_raw[:, top:top + crop, left:left + crop]
    y_rgb = pair.y_rgb[:, 2 * top:2 * (top + crop), 2 * left:2 * (left + crop)]
    return x, y_raw, y_rgb


def _batch(dataset, cfg: TrainConfig, step: int):
    xs, yraws, yrgbs = [], [], []
    for j in range(cfg.batch_size):
        pos = (step - 1) * cfg.batch_size + j
        pair = dataset[sample_index(cfg.seed, len(dataset), pos)]
        x, y_raw, y_rgb = _crop_pair(pair, cfg.crop, cfg.seed, step, j)
        xs.append(x)
        yraws.append(y_raw)
        yrgbs.append(y_rgb)
    return (Tensor(np.stack(xs)), Tensor(np.stack(yraws)), Tensor(np.stack(yrgbs)))


def evaluate_psnr(model: EnhancerNet, dataset, max_samples: int = 2) -> float:
    vals = []
    for i in range(min(max_samples, len(dataset))):
        pair = dataset[i]
        pred = model.forward_infer(Tensor(pair.x[None])).data[0]
        vals.append(psnr(pred, pair.y_rgb))
    return float(np.mean(vals))


@dataclass
class TrainResult:
    model: EnhancerNet
    metrics: list[dict]
    checkpoint: str | None


def train(model: EnhancerNet, dataset, cfg: TrainConfig,
          out_dir: str | None = None, resume: str | None = None,
          log: bool = False) -> TrainResult:
    cfg.validate()
    named = list(model.named_parameters())
    opt = AdamW(named, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    if resume is not None:
        from .fileio import CHECKPOINT_MAGIC, read_tensor_file

        _, tensors = read_tensor_file(resume, CHECKPOINT_MAGIC)
        model.load_state(tensors)
        opt.load_state(tensors)
    start = opt.step_count
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []
    ckpt_path = None

    for step in range(start + 1, cfg.steps + 1):
        x, y_raw, y_rgb = _batch(dataset, cfg, step)
        model.zero_grad()
        with tape() as t:
            outputs = model.forward_train(x)
            target_raw = y_raw if outputs.y_raw is not None else None
            total, l_rgb, l_raw = combined_loss(outputs, y_rgb, target_raw,
                                                cfg.lambda_rgb, cfg.lambda_raw)
            t.backward(total)
        opt.step()
        row = {"step": step, "loss_total": total.item(), "loss_rgb": l_rgb,
               "loss_raw": l_raw if l_raw is not None else "", "psnr": ""}
        if step % cfg.eval_every == 0 or step == cfg.steps:
            row["psnr"] = f"{evaluate_psnr(model, dataset):.4f}"
            if out:
                ckpt_path = str(out / f"ckpt_{step:06d}.fdat")
                model.save(ckpt_path, extra_entries=opt.state_entries(),
                           extra_header={"train": cfg.to_dict()})
        metrics.append(row)
        if log and (step % cfg.eval_every == 0 or step == 1):
            print(f"step {step:6d}  loss {row['loss_total']:.5f}  psnr {row['psnr'] or '-'}")
    if out:
        write_metrics_csv(out / "metrics.csv", metrics)
    return TrainResult(model=model, metrics=metrics, checkpoint=ckpt_path)


def write_metrics_csv(path, metrics: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for row in metrics:
            writer.writerow(row)
