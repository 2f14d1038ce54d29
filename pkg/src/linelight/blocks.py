"""Reusable network blocks built on the taped ops.

Blocks own their parameter tensors, created eagerly from an explicit RNG so
two builds from equal seeds are bit-identical.  Each block also knows its
multiply-accumulate cost for the accounting report; the convention is one
MAC per multiply-add in convolutions and attention products, and one per
element for normalizations (documented in the report header).
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .autodiff import Tensor
from .errors import DimensionError


def kaiming_uniform(gen: np.random.Generator, shape: tuple, fan_in: int,
                    dtype=np.float32) -> np.ndarray:
    # Unit gain (variance 1/fan_in): the network is GELU/attention with
    # normalization layers, so the ReLU-specific sqrt(2) gain over-amplifies.
    bound = np.sqrt(3.0 / fan_in)
    return gen.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal parameter container with deterministic traversal order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(val, Tensor) and val.requires_grad:
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, gen: np.random.Generator, cin: int, cout: int, kernel: int,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True):
        self.cin, self.cout = cin, cout
        self.kernel, self.stride, self.padding, self.groups = kernel, stride, padding, groups
        fan_in = (cin // groups) * kernel * kernel
        self.weight = Tensor(
            kaiming_uniform(gen, (cout, cin // groups, kernel, kernel), fan_in),
            requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          padding=self.padding, groups=self.groups)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def macs(self, h: int, w: int) -> int:
        ho, wo = self.out_hw(h, w)
        return self.cout * ho * wo * (self.cin // self.groups) * self.kernel * self.kernel


class LayerNorm(Module):
    """Channel normalization per spatial location."""

    def __init__(self, channels: int, eps: float = 1e-6):
        self.channels = channels
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)

    def macs(self, h: int, w: int) -> int:
        return self.channels * h * w


class GroupNorm(Module):
    def __init__(self, channels: int, num_groups: int, eps: float = 1e-6):
        self.channels = channels
        self.num_groups = num_groups
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.num_groups, self.gamma, self.beta, self.eps)

    def macs(self, h: int, w: int) -> int:
        return self.channels * h * w


class ResidualConvBlock(Module):
    """Depthwise 7x7, two pointwise convs with GELU between, residual add.

    Spatial mixing stays channel-independent; all channel mixing happens in
    the 1x1 convs.  Output shape equals input shape.
    """

    def __init__(self, gen: np.random.Generator, channels: int, expansion: int = 2):
        self.channels = channels
        self.depthwise = Conv2d(gen, channels, channels, 7, padding=3, groups=channels)
        self.pointwise1 = Conv2d(gen, channels, expansion * channels, 1)
        self.pointwise2 = Conv2d(gen, expansion * channels, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise DimensionError(
                f"block built for {self.channels} channels, input has {x.shape[1]} (axis 1)")
        y = self.depthwise(x)
        y = self.pointwise1(y)
        y = ops.gelu(y)
        y = self.pointwise2(y)
        return ops.add(x, y)

    def macs(self, h: int, w: int) -> int:
        return (self.depthwise.macs(h, w) + self.pointwise1.macs(h, w)
                + self.pointwise2.macs(h, w))


class Downsample(Module):
    """Strided 2x2 conv: (N, C, H, W) -> (N, 2C, H/2, W/2)."""

    def __init__(self, gen: np.random.Generator, channels: int):
        self.channels = channels
        self.conv = Conv2d(gen, channels, 2 * channels, 2, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"downsample needs even extents, got {h}x{w} (axes 2,3)")
        return self.conv(x)

    def macs(self, h: int, w: int) -> int:
        return self.conv.macs(h, w)


class Upsample(Module):
    """1x1 conv to 2C then pixel shuffle: (N, C, H, W) -> (N, C/2, 2H, 2W)."""

    def __init__(self, gen: np.random.Generator, channels: int):
        if channels % 2:
            raise DimensionError(f"upsample needs even channels, got {channels} (axis 1)")
        self.channels = channels
        self.conv = Conv2d(gen, channels, 2 * channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.pixel_shuffle(self.conv(x), 2)

    def macs(self, h: int, w: int) -> int:
        return self.conv.macs(h, w)


class ChannelAttention(Module):
    """Transposed attention over channels with a global spatial footprint.

    Q and K are L2-normalized C x (H*W) matrices, so the CxC attention map is
    built from cosine similarities scaled by a learnable temperature; every
    output pixel depends on every input pixel.
    """

    def __init__(self, gen: np.random.Generator, channels: int, dw_kernel: int = 3):
        self.channels = channels
        self.q_point = Conv2d(gen, channels, channels, 1)
        self.q_depth = Conv2d(gen, channels, channels, dw_kernel,
                              padding=dw_kernel // 2, groups=channels)
        self.k_point = Conv2d(gen, channels, channels, 1)
        self.k_depth = Conv2d(gen, channels, channels, dw_kernel,
                              padding=dw_kernel // 2, groups=channels)
        self.v_point = Conv2d(gen, channels, channels, 1)
        self.v_depth = Conv2d(gen, channels, channels, dw_kernel,
                              padding=dw_kernel // 2, groups=channels)
        self.temperature = Tensor(np.ones((), np.float32), requires_grad=True)
        self.out_point = Conv2d(gen, channels, channels, 1)

    def attention_map(self, x: Tensor) -> Tensor:
        """The (N, C, C) row-stochastic attention matrix, for probes."""
        n, c, h, w = x.shape
        q = ops.reshape(self.q_depth(self.q_point(x)), (n, c, h * w))
        k = ops.reshape(self.k_depth(self.k_point(x)), (n, c, h * w))
        scores = ops.matmul(ops.l2_normalize(q, axis=-1),
                            ops.transpose(ops.l2_normalize(k, axis=-1), (0, 2, 1)))
        return ops.softmax(ops.mul_scalar(scores, self.temperature), axis=-1)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        attn = self.attention_map(x)
        v = ops.reshape(self.v_depth(self.v_point(x)), (n, c, h * w))
        mixed = ops.reshape(ops.matmul(attn, v), (n, c, h, w))
        return ops.add(x, self.out_point(mixed))

    def macs(self, h: int, w: int) -> int:
        hw = h * w
        c = self.channels
        convs = sum(m.macs(h, w) for m in (self.q_point, self.q_depth, self.k_point,
                                           self.k_depth, self.v_point, self.v_depth,
                                           self.out_point))
        attn = 2 * c * c * hw          # scores and value mixing
        norms = 2 * c * hw + c * c     # two L2 normalizations plus softmax
        return convs + attn + norms
