"""Feature adapters: map denoising-oriented encoder features to the color
mapping domain before the sRGB decoder consumes them.

The primary adapter runs line attention (global along each row, local across
``window_rows`` rows), followed by a group normalization that controls the
un-normalized attention output's variance, and a pointwise/depthwise
refinement with a residual path.  Two swap-in alternatives (plain
convolution, channel attention) exist for ablations.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import line_attention, streaming_attention_image
from .autodiff import Tensor
from .blocks import ChannelAttention, Conv2d, GroupNorm, LayerNorm, Module
from .errors import ConfigurationError

ADAPTER_KINDS = ("line_attention", "conv", "channel_attention")


class QkvProjection(Module):
    """Shared LayerNorm, then an independent pointwise + depthwise conv per head."""

    def __init__(self, gen: np.random.Generator, channels: int, dw_kernel: int = 3):
        self.norm = LayerNorm(channels)
        self.q_point = Conv2d(gen, channels, channels, 1)
        self.q_depth = Conv2d(gen, channels, channels, dw_kernel,
                              padding=dw_kernel // 2, groups=channels)
        self.k_point = Conv2d(gen, channels, channels, 1)
        self.k_depth = Conv2d(gen, channels, channels, dw_kernel,
                              padding=dw_kernel // 2, groups=channels)
        self.v_point = Conv2d(gen, channels, channels, 1)
        self.v_depth = Conv2d(gen, channels, channels, dw_kernel,
                              padding=dw_kernel // 2, groups=channels)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        normed = self.norm(x)
        q = self.q_depth(self.q_point(normed))
        k = self.k_depth(self.k_point(normed))
        v = self.v_depth(self.v_point(normed))
        return q, k, v

    def macs(self, h: int, w: int) -> int:
        return self.norm.macs(h, w) + sum(
            m.macs(h, w) for m in (self.q_point, self.q_depth, self.k_point,
                                   self.k_depth, self.v_point, self.v_depth))


class LineAttentionAdapter(Module):
    """Line attention followed by GroupNorm and PConv/DConv refinement.

    y = DConv(PConv_outer(PConv_inner(GroupNorm(attend(x))) + x))
    """

    def __init__(self, gen: np.random.Generator, channels: int, window_rows: int,
                 norm_groups: int):
        if window_rows % 2 == 0 or window_rows < 1:
            raise ConfigurationError(f"window_rows must be odd, got {window_rows}")
        self.channels = channels
        self.window_rows = window_rows
        self.qkv = QkvProjection(gen, channels)
        self.norm = GroupNorm(channels, norm_groups)
        self.point_inner = Conv2d(gen, channels, channels, 1)
        self.point_outer = Conv2d(gen, channels, channels, 1)
        self.depth_out = Conv2d(gen, channels, channels, 3, padding=1, groups=channels)

    def attend(self, x: Tensor, streaming: bool = False) -> Tensor:
        q, k, v = self.qkv(x)
        if streaming:
            out = np.stack([streaming_attention_image(q.data[i], k.data[i], v.data[i],
                                                      self.window_rows)
                            for i in range(x.shape[0])])
            return Tensor(out)
        return line_attention(q, k, v, self.window_rows)

    def forward(self, x: Tensor, streaming: bool = False) -> Tensor:
        t = self.norm(self.attend(x, streaming=streaming))
        y = ops.add(self.point_inner(t), x)
        return self.depth_out(self.point_outer(y))

    def macs(self, h: int, w: int) -> int:
        attn = 2 * h * w * self.channels * self.channels  # row aggregates + apply
        return (self.qkv.macs(h, w) + attn + self.norm.macs(h, w)
                + self.point_inner.macs(h, w) + self.point_outer.macs(h, w)
                + self.depth_out.macs(h, w))


class ConvAdapter(Module):
    """Plain convolutional stand-in: 3x3, GELU, 3x3, residual."""

    def __init__(self, gen: np.random.Generator, channels: int):
        self.channels = channels
        self.conv1 = Conv2d(gen, channels, channels, 3, padding=1)
        self.conv2 = Conv2d(gen, channels, channels, 3, padding=1)

    def forward(self, x: Tensor, streaming: bool = False) -> Tensor:
        return ops.add(x, self.conv2(ops.gelu(self.conv1(x))))

    def macs(self, h: int, w: int) -> int:
        return self.conv1.macs(h, w) + self.conv2.macs(h, w)


class ChannelAttentionAdapter(Module):
    """Channel attention stand-in for ablations."""

    def __init__(self, gen: np.random.Generator, channels: int):
        self.channels = channels
        self.attn = ChannelAttention(gen, channels)

    def forward(self, x: Tensor, streaming: bool = False) -> Tensor:
        return self.attn(x)

    def macs(self, h: int, w: int) -> int:
        return self.attn.macs(h, w)


def make_adapter(kind: str, gen: np.random.Generator, channels: int,
                 window_rows: int, norm_groups: int) -> Module:
    if kind == "line_attention":
        return LineAttentionAdapter(gen, channels, window_rows, norm_groups)
    if kind == "conv":
        return ConvAdapter(gen, channels)
    if kind == "channel_attention":
        return ChannelAttentionAdapter(gen, channels)
    raise ConfigurationError(f"unknown adapter kind {kind!r}; expected one of {ADAPTER_KINDS}")
