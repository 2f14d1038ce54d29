"""Bayer raw handling and the synthetic paired-data generator.

Samples are fully synthetic so training runs with zero external data: a
procedural latent RGB scene is mosaiced to RGGB, darkened and corrupted with
Poisson-Gaussian noise, then amplified back up by the per-sample ratio.  The
clean targets are the packed clean mosaic and its rendering through a small
fixed ISP (white balance, bilinear demosaic, color matrix, gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import rng
from .errors import ConfigurationError, DimensionError

SeedLike = "int | np.random.SeedSequence"

WB_GAINS = (2.0, 1.0, 1.5)  # R, G, B
COLOR_MATRIX = np.array([
    [1.66, -0.56, -0.10],
    [-0.35, 1.72, -0.37],
    [-0.12, -0.46, 1.58],
])  # rows sum to 1.0, so flat gray is preserved
GAMMA = 2.2
AMPLIFY_RATIOS = (50.0, 100.0, 250.0)


@dataclass
class BayerFrame:
    """Single-channel RGGB mosaic, black-level normalized to [0, 1]."""

    data: np.ndarray
    pattern: str = "RGGB"
    black_level: float = 0.0
    white_level: float = 1.0

    def __post_init__(self):
        if self.pattern != "RGGB":
            raise ConfigurationError(f"only RGGB mosaics are supported, got {self.pattern!r}")
        if self.data.ndim != 2 or self.data.shape[0] % 2 or self.data.shape[1] % 2:
            raise DimensionError(f"mosaic extents must be even 2D, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationError("mosaic contains non-finite values")


def bayer_pack(frame: BayerFrame | np.ndarray) -> np.ndarray:
    """(H, W) RGGB mosaic -> (4, H/2, W/2) planes ordered [R, G1, G2, B]."""
    d = frame.data if isinstance(frame, BayerFrame) else np.asarray(frame)
    if d.ndim != 2 or d.shape[0] % 2 or d.shape[1] % 2:
        raise DimensionError(f"mosaic extents must be even, got {d.shape}")
    return np.stack([d[0::2, 0::2], d[0::2, 1::2], d[1::2, 0::2], d[1::2, 1::2]])


def bayer_unpack(packed: np.ndarray) -> np.ndarray:
    """Exact inverse of bayer_pack."""
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise DimensionError(f"packed raw must be (4, H/2, W/2), got {packed.shape}")
    _, h2, w2 = packed.shape
    mosaic = np.empty((2 * h2, 2 * w2), dtype=packed.dtype)
    mosaic[0::2, 0::2] = packed[0]
    mosaic[0::2, 1::2] = packed[1]
    mosaic[1::2, 0::2] = packed[2]
    mosaic[1::2, 1::2] = packed[3]
    return mosaic


def amplify(x: np.ndarray, ratio: float) -> np.ndarray:
    """Brightness pre-amplification: clamp(x * ratio, 0, 1)."""
    if ratio < 1.0:
        raise ConfigurationError(f"amplification ratio must be >= 1, got {ratio}")
    return np.clip(x * ratio, 0.0, 1.0).astype(x.dtype)


def scene_latent(seed, height: int, width: int) -> np.ndarray:
    """The (3, H, W) latent RGB image a synthetic scene is mosaiced from."""
    if height % 2 or width % 2:
        raise DimensionError(f"scene extents must be even, got {height}x{width}")
    gen = rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    latent = np.empty((3, height, width))
    for c in range(3):
        a, b = gen.uniform(-0.4, 0.4, size=2)
        latent[c] = 0.45 + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(8):
        y0, x0 = gen.integers(0, height // 2), gen.integers(0, width // 2)
        hh = int(gen.integers(height // 8, height // 2))
        ww = int(gen.integers(width // 8, width // 2))
        color = gen.uniform(0.05, 0.95, size=3)
        latent[:, y0:y0 + hh, x0:x0 + ww] = color[:, None, None]
    for _ in range(2):
        x0 = int(gen.integers(0, width - 2))
        bw = int(gen.integers(1, max(2, width // 16)))
        color = gen.uniform(0.05, 0.95, size=3)
        latent[:, :, x0:x0 + bw] = color[:, None, None]
    return np.clip(latent, 0.0, 1.0)


def synth_scene(seed, height: int, width: int) -> BayerFrame:
    """Deterministic procedural scene: gradients, rectangles and hard edges.

    The mosaic samples the latent RGB image of :func:`scene_latent`, so each
    packed plane equals the matching latent channel on its own pixel grid
    exactly.
    """
    latent = scene_latent(seed, height, width)
    mosaic = np.empty((height, width))
    mosaic[0::2, 0::2] = latent[0, 0::2, 0::2]
    mosaic[0::2, 1::2] = latent[1, 0::2, 1::2]
    mosaic[1::2, 0::2] = latent[1, 1::2, 0::2]
    mosaic[1::2, 1::2] = latent[2, 1::2, 1::2]
    return BayerFrame(mosaic.astype(np.float32))


@dataclass
class NoiseModel:
    """Poisson shot noise at photon_scale plus Gaussian read noise."""

    photon_scale: float = 500.0
    read_sigma: float = 0.002
    seed: object = 0

    def __post_init__(self):
        if self.photon_scale <= 0:
            raise ConfigurationError(f"photon_scale must be > 0, got {self.photon_scale}")
        if self.read_sigma < 0:
            raise ConfigurationError(f"read_sigma must be >= 0, got {self.read_sigma}")


def add_low_light_noise(clean: BayerFrame, nm: NoiseModel, dim_factor: float) -> BayerFrame:
    """noisy = Poisson(clean * dim * k) / k + N(0, sigma^2), seeded."""
    if not 0.0 < dim_factor <= 1.0:
        raise ConfigurationError(f"dim_factor must be in (0, 1], got {dim_factor}")
    gen = rng(nm.seed)
    k = nm.photon_scale
    shot = gen.poisson(clean.data.astype(np.float64) * dim_factor * k) / k
    noisy = shot + gen.normal(0.0, nm.read_sigma, size=clean.data.shape)
    return BayerFrame(noisy.astype(np.float32), clean.pattern,
                      clean.black_level, clean.white_level)


def _demosaic_bilinear(mosaic: np.ndarray) -> np.ndarray:
    """Masked-kernel bilinear demosaic of an RGGB mosaic, f64, (3, H, W)."""
    h, w = mosaic.shape
    masks = np.zeros((3, h, w))
    masks[0, 0::2, 0::2] = 1.0
    masks[1, 0::2, 1::2] = 1.0
    masks[1, 1::2, 0::2] = 1.0
    masks[2, 1::2, 1::2] = 1.0
    kern_rb = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)
    kern_g = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64)
    out = np.empty((3, h, w))
    for c, kern in ((0, kern_rb), (1, kern_g), (2, kern_rb)):
        num = _conv3x3(mosaic * masks[c], kern)
        den = _conv3x3(masks[c], kern)
        out[c] = num / den
    return out


def _conv3x3(plane: np.ndarray, kern: np.ndarray) -> np.ndarray:
    padded = np.pad(plane, 1)
    acc = np.zeros_like(plane)
    for i in range(3):
        for j in range(3):
            if kern[i, j]:
                acc += kern[i, j] * padded[i:i + plane.shape[0], j:j + plane.shape[1]]
    return acc


def simple_isp(raw_packed: np.ndarray) -> np.ndarray:
    """Fixed deterministic raw -> sRGB rendering: WB, demosaic, CCM, gamma.

    Pure function computed in f64 and returned as f32 (3, H, W).
    """
    if raw_packed.ndim != 3 or raw_packed.shape[0] != 4:
        raise DimensionError(f"packed raw must be (4, H/2, W/2), got {raw_packed.shape}")
    gains = np.array([WB_GAINS[0], WB_GAINS[1], WB_GAINS[1], WB_GAINS[2]])
    balanced = np.clip(raw_packed.astype(np.float64) * gains[:, None, None], 0.0, 1.0)
    rgb = _demosaic_bilinear(bayer_unpack(balanced))
    rgb = np.einsum("ij,jhw->ihw", COLOR_MATRIX, rgb)
    rgb = np.clip(rgb, 0.0, 1.0) ** (1.0 / GAMMA)
    return rgb.astype(np.float32)


@dataclass
class SamplePair:
    """One training example: amplified noisy input and its clean targets."""

    x: np.ndarray       # (4, H/2, W/2) packed, amplified, clamped
    y_raw: np.ndarray   # (4, H/2, W/2) packed clean mosaic
    y_rgb: np.ndarray   # (3, H, W) clean sRGB
    ratio: float


def sample_pair(seed: int, index: int, height: int, width: int,
                noise: NoiseModel | None = None) -> SamplePair:
    """Pure function of (seed, index): bit-identical on every call."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    s_scene, s_noise, s_misc = ss.spawn(3)
    clean = synth_scene(s_scene, height, width)
    ratio = float(rng(s_misc).choice(AMPLIFY_RATIOS))
    base = noise or NoiseModel()
    nm = NoiseModel(base.photon_scale, base.read_sigma, s_noise)
    noisy = add_low_light_noise(clean, nm, dim_factor=1.0 / ratio)
    x = amplify(bayer_pack(noisy), ratio)
    y_raw = bayer_pack(clean)
    return SamplePair(x=x, y_raw=y_raw, y_rgb=simple_isp(y_raw), ratio=ratio)


class SyntheticDataset:
    """Deterministic in-memory dataset of sample_pair() outputs."""

    def __init__(self, seed: int, count: int, height: int = 128, width: int = 128,
                 noise: NoiseModel | None = None):
        if count < 1:
            raise ConfigurationError(f"dataset count must be >= 1, got {count}")
        self.seed = seed
        self.count = count
        self.height = height
        self.width = width
        self.noise = noise
        self._cache: dict[int, SamplePair] = {}

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> SamplePair:
        if index not in self._cache:
            if not 0 <= index < self.count:
                raise IndexError(index)
            self._cache[index] = sample_pair(self.seed, index, self.height,
                                             self.width, self.noise)
        return self._cache[index]
