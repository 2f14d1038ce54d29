"""The full enhancement network.

One shared encoder feeds two decoders: the sRGB decoder consumes adapted
multi-scale features through channel-attention stages (addition skips); the
auxiliary raw decoder consumes the unadapted features through residual conv
stages (concatenation skips) and exists only in the training graph.  At
inference the raw branch is never evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import ops
from .adapter import ADAPTER_KINDS, make_adapter
from .autodiff import Tensor, rng
from .blocks import ChannelAttention, Conv2d, Downsample, Module, ResidualConvBlock, Upsample
from .errors import ConfigurationError, DimensionError, FormatError
from .fileio import CHECKPOINT_MAGIC, read_tensor_file, write_tensor_file


@dataclass
class ModelConfig:
    num_scales: int = 3
    base_channels: int = 16
    blocks_per_scale: int = 2
    window_rows: int | list = 7
    norm_groups: int = 4
    expansion: int = 2
    use_adapter: bool = True
    use_raw_supervision: bool = True
    adapter_kind: str = "line_attention"

    def validate(self) -> None:
        if self.num_scales < 1:
            raise ConfigurationError(f"num_scales must be >= 1, got {self.num_scales}")
        if self.base_channels % self.norm_groups != 0:
            raise ConfigurationError(
                f"base_channels={self.base_channels} not divisible by "
                f"norm_groups={self.norm_groups}")
        for h in self.windows():
            if h < 1 or h % 2 == 0:
                raise ConfigurationError(f"window_rows entries must be odd, got {h}")
        if self.adapter_kind not in ADAPTER_KINDS:
            raise ConfigurationError(
                f"adapter_kind={self.adapter_kind!r} not in {ADAPTER_KINDS}")

    def windows(self) -> list[int]:
        if isinstance(self.window_rows, int):
            return [self.window_rows] * self.num_scales
        if len(self.window_rows) != self.num_scales:
            raise ConfigurationError(
                f"window_rows list has {len(self.window_rows)} entries "
                f"for {self.num_scales} scales")
        return list(self.window_rows)

    def channels(self) -> list[int]:
        return [self.base_channels * (1 << s) for s in range(self.num_scales)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config fields: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Small preset used by smoke training and gradient checks."""
        return cls(num_scales=2, base_channels=8, blocks_per_scale=1,
                   window_rows=3, norm_groups=2)


@dataclass
class NetworkOutputs:
    y_rgb: Tensor
    y_raw: Tensor | None = None


class Stage(Module):
    """A chain of residual conv blocks at one scale."""

    def __init__(self, gen, channels: int, count: int, expansion: int):
        self.blocks = [ResidualConvBlock(gen, channels, expansion) for _ in range(count)]

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x

    def macs(self, h: int, w: int) -> int:
        return sum(b.macs(h, w) for b in self.blocks)


class EnhancerNet(Module):
    IN_CHANNELS = 4   # packed Bayer planes
    OUT_CHANNELS = 3  # sRGB at twice the packed resolution

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        gen = rng(seed)
        chans = config.channels()
        windows = config.windows()
        s = config.num_scales

        self.stem = Conv2d(gen, self.IN_CHANNELS, chans[0], 3, padding=1)
        self.enc_stages = [Stage(gen, chans[i], config.blocks_per_scale, config.expansion)
                           for i in range(s)]
        self.downs = [Downsample(gen, chans[i]) for i in range(s - 1)]
        if config.use_adapter:
            self.adapters = [make_adapter(config.adapter_kind, gen, chans[i],
                                          windows[i], config.norm_groups)
                             for i in range(s)]
        else:
            self.adapters = []
        self.srgb_stages = [ChannelAttention(gen, chans[i]) for i in range(s)]
        self.srgb_ups = [Upsample(gen, chans[i + 1]) for i in range(s - 1)]
        self.srgb_head = Conv2d(gen, chans[0], 12, 1)
        self.raw_ups = [Upsample(gen, chans[i + 1]) for i in range(s - 1)]
        self.raw_fuses = [Conv2d(gen, 2 * chans[i], chans[i], 1) for i in range(s - 1)]
        self.raw_stages = [Stage(gen, chans[i], config.blocks_per_scale, config.expansion)
                           for i in range(s - 1)]
        self.raw_head = Conv2d(gen, chans[0], self.IN_CHANNELS, 1)
        # Probe counter: both decoders must share a single encoder evaluation.
        self.encoder_calls = 0

    # ---------------------------------------------------------------- forward

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.shape[1] != self.IN_CHANNELS:
            raise DimensionError(
                f"expected (N, {self.IN_CHANNELS}, H, W) packed raw input, got {x.shape}")
        div = 1 << (self.config.num_scales - 1)
        _, _, h, w = x.shape
        if h % div or w % div:
            raise DimensionError(
                f"spatial extents {h}x{w} not divisible by 2^(num_scales-1)={div} (axes 2,3)")

    def encode(self, x: Tensor) -> list[Tensor]:
        self.encoder_calls += 1
        feats = []
        y = self.stem(x)
        for i in range(self.config.num_scales):
            y = self.enc_stages[i](y)
            feats.append(y)
            if i < self.config.num_scales - 1:
                y = self.downs[i](y)
        return feats

    def adapt(self, feats: list[Tensor], streaming: bool = False) -> list[Tensor]:
        if not self.config.use_adapter:
            return feats
        return [a(f, streaming=streaming) for a, f in zip(self.adapters, feats)]

    def decode_srgb(self, adapted: list[Tensor]) -> Tensor:
        s = self.config.num_scales
        y = self.srgb_stages[s - 1](adapted[s - 1])
        for i in range(s - 2, -1, -1):
            y = self.srgb_ups[i](y)
            y = ops.add(y, adapted[i])
            y = self.srgb_stages[i](y)
        return ops.pixel_shuffle(self.srgb_head(y), 2)

    def decode_raw(self, feats: list[Tensor]) -> Tensor:
        s = self.config.num_scales
        y = feats[s - 1]
        for i in range(s - 2, -1, -1):
            y = self.raw_ups[i](y)
            y = self.raw_fuses[i](ops.concat([y, feats[i]], axis=1))
            y = self.raw_stages[i](y)
        return self.raw_head(y)

    def forward_train(self, x: Tensor) -> NetworkOutputs:
        """Full training graph; the raw branch only exists when supervised."""
        self._check_input(x)
        feats = self.encode(x)
        y_rgb = self.decode_srgb(self.adapt(feats))
        y_raw = self.decode_raw(feats) if self.config.use_raw_supervision else None
        return NetworkOutputs(y_rgb=y_rgb, y_raw=y_raw)

    def forward_infer(self, x: Tensor, streaming: bool = False) -> Tensor:
        """Inference graph: the raw decoder is never evaluated or allocated."""
        self._check_input(x)
        feats = self.encode(x)
        return self.decode_srgb(self.adapt(feats, streaming=streaming))

    forward = forward_infer

    # ------------------------------------------------------------- accounting

    def enumerate_blocks(self, h: int, w: int):
        """Yield (name, macs, params, section) for a packed input of h x w.

        Sections: encoder / adapter / srgb_decoder / raw_decoder.  The raw
        decoder belongs to the training graph only.
        """
        cfg = self.config
        s = cfg.num_scales
        hs = [(h >> i, w >> i) for i in range(s)]
        yield "stem", self.stem.macs(h, w), self.stem.param_count(), "encoder"
        for i in range(s):
            yield (f"encoder.stage{i}", self.enc_stages[i].macs(*hs[i]),
                   self.enc_stages[i].param_count(), "encoder")
            if i < s - 1:
                yield (f"encoder.down{i}", self.downs[i].macs(*hs[i]),
                       self.downs[i].param_count(), "encoder")
        for i, a in enumerate(self.adapters):
            yield f"adapter.scale{i}", a.macs(*hs[i]), a.param_count(), "adapter"
        yield (f"srgb.stage{s - 1}", self.srgb_stages[s - 1].macs(*hs[s - 1]),
               self.srgb_stages[s - 1].param_count(), "srgb_decoder")
        for i in range(s - 2, -1, -1):
            yield (f"srgb.up{i}", self.srgb_ups[i].macs(*hs[i + 1]),
                   self.srgb_ups[i].param_count(), "srgb_decoder")
            yield (f"srgb.stage{i}", self.srgb_stages[i].macs(*hs[i]),
                   self.srgb_stages[i].param_count(), "srgb_decoder")
        yield "srgb.head", self.srgb_head.macs(h, w), self.srgb_head.param_count(), "srgb_decoder"
        for i in range(s - 2, -1, -1):
            yield (f"raw.up{i}", self.raw_ups[i].macs(*hs[i + 1]),
                   self.raw_ups[i].param_count(), "raw_decoder")
            yield (f"raw.fuse{i}", self.raw_fuses[i].macs(*hs[i]),
                   self.raw_fuses[i].param_count(), "raw_decoder")
            yield (f"raw.stage{i}", self.raw_stages[i].macs(*hs[i]),
                   self.raw_stages[i].param_count(), "raw_decoder")
        yield "raw.head", self.raw_head.macs(h, w), self.raw_head.param_count(), "raw_decoder"

    # ------------------------------------------------------------ persistence

    def state_entries(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.named_parameters()]

    def save(self, path, extra_entries: list[tuple[str, np.ndarray]] | None = None,
             extra_header: dict | None = None) -> None:
        header = {"config": self.config.to_dict(), "seed": self.seed}
        header.update(extra_header or {})
        entries = [("model/" + n, d) for n, d in self.state_entries()]
        entries += list(extra_entries or [])
        write_tensor_file(path, entries, CHECKPOINT_MAGIC, header)

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            key = "model/" + name
            if key not in tensors:
                raise FormatError(f"checkpoint missing tensor {key!r}")
            if tensors[key].shape != p.shape:
                raise FormatError(
                    f"shape mismatch for tensor {key!r}: checkpoint has "
                    f"{tensors[key].shape}, model needs {p.shape}")
            p.data = tensors[key].astype(p.dtype)


def build(config: ModelConfig, seed: int = 0) -> EnhancerNet:
    return EnhancerNet(config, seed)


def load(path) -> tuple[EnhancerNet, dict, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint; returns (model, header, all tensors)."""
    header, tensors = read_tensor_file(path, CHECKPOINT_MAGIC)
    if "config" not in header:
        raise FormatError("checkpoint header missing 'config'")
    model = EnhancerNet(ModelConfig.from_dict(header["config"]), seed=header.get("seed", 0))
    model.load_state(tensors)
    return model, header, tensors
