"""File formats: tensor containers, checkpoints, PPM previews, manifests.

Both container formats share one framing: a 5-byte magic string, a little-
endian u32 header length, a JSON header, then raw little-endian f32 buffers
in header order.  Read errors carry the byte offset at which the file
stopped making sense.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"FDAT1"
RAW_MAGIC = b"FRAW1"


def write_tensor_file(path, entries: list[tuple[str, np.ndarray]], magic: bytes,
                      extra: dict | None = None) -> None:
    header = dict(extra or {})
    header["tensors"] = [
        {"name": name, "shape": list(arr.shape), "dtype": "f32"} for name, arr in entries
    ]
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in entries:
            if arr.dtype != np.float32:
                raise FormatError(f"tensor buffers must be f32, got {arr.dtype}")
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_file(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (header, {name: array}); raises FormatError with a byte offset."""
    data = Path(path).read_bytes()
    if data[:5] != magic:
        raise FormatError(f"bad magic {data[:5]!r}, expected {magic!r}", offset=0)
    if len(data) < 9:
        raise FormatError("truncated before header length", offset=len(data))
    (hlen,) = struct.unpack("<I", data[5:9])
    if len(data) < 9 + hlen:
        raise FormatError("truncated inside JSON header", offset=len(data))
    try:
        header = json.loads(data[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt JSON header: {e}", offset=9) from e
    if "tensors" not in header:
        raise FormatError("header missing 'tensors' list", offset=9)
    offset = 9 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if len(data) < offset + nbytes:
            raise FormatError(
                f"truncated buffer for tensor {entry['name']!r}", offset=len(data))
        buf = np.frombuffer(data[offset:offset + nbytes], dtype="<f4")
        tensors[entry["name"]] = buf.reshape(shape).astype(np.float32)
        offset += nbytes
    return header, tensors


def write_raw_tensor(path, arr: np.ndarray, pattern: str | None = None,
                     ratio: float | None = None) -> None:
    extra = {"pattern": pattern, "ratio": ratio}
    write_tensor_file(path, [("data", np.asarray(arr, np.float32))], RAW_MAGIC, extra)


def read_raw_tensor(path) -> tuple[np.ndarray, dict]:
    header, tensors = read_tensor_file(path, RAW_MAGIC)
    return tensors["data"], header


def write_ppm(path, img: np.ndarray) -> None:
    """Binary PPM preview of a (3, H, W) float image in [0, 1]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"PPM wants (3, H, W), got {img.shape}")
    _, h, w = img.shape
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.transpose(1, 2, 0).tobytes())


def write_manifest(path, samples: list[dict], meta: dict | None = None) -> None:
    doc = dict(meta or {})
    doc["samples"] = samples
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt manifest: {e}") from e
