"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite values")
    return arr


def check_packed_raw(x, name: str = "X", divisor: int = 1) -> np.ndarray:
    """(N, 4, H, W) packed raw batch with the required spatial divisibility."""
    arr = as_float_array(x, name)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 4:
        raise DimensionError(f"{name} must be (N, 4, H, W) packed raw, got {arr.shape}")
    _, _, h, w = arr.shape
    if h % divisor or w % divisor:
        raise DimensionError(
            f"{name} spatial extents {h}x{w} must be divisible by {divisor} (axes 2,3)")
    return arr


def check_rgb_target(y, x: np.ndarray, name: str = "y") -> np.ndarray:
    """(N, 3, 2H, 2W) sRGB target matching a packed (N, 4, H, W) input."""
    arr = as_float_array(y, name)
    if arr.ndim == 3:
        arr = arr[None]
    n, _, h, w = x.shape
    if arr.shape != (n, 3, 2 * h, 2 * w):
        raise DimensionError(
            f"{name} must be (N, 3, 2H, 2W) = ({n}, 3, {2 * h}, {2 * w}), got {arr.shape}")
    return arr


def check_raw_target(y_raw, x: np.ndarray, name: str = "y_raw") -> np.ndarray:
    arr = as_float_array(y_raw, name)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape != x.shape:
        raise DimensionError(f"{name} must match X shape {x.shape}, got {arr.shape}")
    return arr
