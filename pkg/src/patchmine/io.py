"""File formats: tensor text fixtures, binary PPM images, FNV-1a digests.

Tensor text format::

    <rank>
    <dim_0> <dim_1> ...
    <row-major values, one last-axis row per line, 17 significant digits>
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def format_tensor(x: np.ndarray) -> str:
    x = np.asarray(x)
    if x.ndim < 1 or 0 in x.shape:
        raise ValueError(f"tensor must have rank >= 1 and positive dims, got {x.shape}")
    rows = x.astype(np.float64).reshape(-1, x.shape[-1])
    buf = io.StringIO()
    buf.write(f"{x.ndim}\n")
    buf.write(" ".join(str(d) for d in x.shape) + "\n")
    for row in rows:
        buf.write(" ".join(format(float(v), ".17g") for v in row) + "\n")
    return buf.getvalue()


def parse_tensor(text: str, dtype=np.float64) -> np.ndarray:
    lines = text.split("\n", 2)
    if len(lines) < 3:
        raise ValueError("tensor text needs a rank line, a dims line and values")
    rank = int(lines[0])
    dims = tuple(int(d) for d in lines[1].split())
    if len(dims) != rank or any(d < 1 for d in dims):
        raise ValueError(f"bad dims {dims} for rank {rank}")
    values = np.array(lines[2].split(), dtype=np.float64)
    if values.size != int(np.prod(dims)):
        raise ValueError(f"expected {int(np.prod(dims))} values, found {values.size}")
    return values.reshape(dims).astype(dtype)


def write_tensor(path, x: np.ndarray) -> None:
    Path(path).write_text(format_tensor(x))


def read_tensor(path, dtype=np.float64) -> np.ndarray:
    return parse_tensor(Path(path).read_text(), dtype)


def write_tensor_dict(directory, tensors: dict[str, np.ndarray]) -> None:
    """One ``<name>.tensor`` file per entry."""
    os.makedirs(directory, exist_ok=True)
    for name, x in tensors.items():
        write_tensor(Path(directory) / f"{name}.tensor", x)


def read_tensor_dict(directory, names, dtype=np.float64) -> dict[str, np.ndarray]:
    return {name: read_tensor(Path(directory) / f"{name}.tensor", dtype) for name in names}


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tensor_checksum(x: np.ndarray) -> str:
    """FNV-1a 64 of the tensor's text rendering, as 16 hex digits."""
    return f"{fnv1a64(format_tensor(x).encode('ascii')):016x}"


# --------------------------------------------------------------------------
# PPM (P6)
# --------------------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the last one."""
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ValueError("truncated PPM header")
        tokens.append(data[start:i])
    return tokens, i


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary PPM into an ``H x W x 3`` float64 array scaled to [0, 1]."""
    tokens, end = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary PPM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"bad PPM header {width}x{height} maxval {maxval}")
    body = data[end + 1:]
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height * 3
    if len(body) < count * np.dtype(dtype).itemsize:
        raise ValueError("truncated PPM pixel data")
    pixels = np.frombuffer(body, dtype=dtype, count=count)
    return pixels.reshape(height, width, 3).astype(np.float64) / maxval


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode a [0, 1] float image as 8-bit P6."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {img.shape}")
    h, w, _ = img.shape
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))
