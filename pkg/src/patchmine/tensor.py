"""Dense tensor substrate.

Tensors are C-contiguous ``numpy.ndarray`` values (float64 by default,
float32 when an oracle comparison needs it). Reductions that feed the
mining attention are summed sequentially over the contracted axis and
vectorised over every other axis, so a batched kernel and a scalar loop
that visit terms in the same order agree bit for bit, and splitting rows
across threads never changes a result.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

MASK64 = (1 << 64) - 1

GELU_COEF = 0.044715
GELU_SCALE = math.sqrt(2.0 / math.pi)

# Rows per thread below which splitting a kernel is not worth it.
_MIN_ROWS_PER_THREAD = 64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def kernel_threads() -> int:
    """Thread cap from ``PATCHMINE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("PATCHMINE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"PATCHMINE_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError("PATCHMINE_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def map_row_chunks(fn, n_rows: int, threads: int | None = None) -> list:
    """Apply ``fn(start, stop)`` over contiguous row chunks, in order."""
    threads = kernel_threads() if threads is None else threads
    n_chunks = max(1, min(threads, n_rows // _MIN_ROWS_PER_THREAD))
    if n_chunks == 1:
        return [fn(0, n_rows)]
    bounds = np.linspace(0, n_rows, n_chunks + 1).astype(int)
    with ThreadPoolExecutor(max_workers=n_chunks) as pool:
        futures = [pool.submit(fn, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        return [f.result() for f in futures]


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


# --------------------------------------------------------------------------
# Deterministic RNG
# --------------------------------------------------------------------------

def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** seeded by four SplitMix64 outputs of ``seed``.

    ``uniform()`` maps the top 53 bits of each draw to ``[0, 1)``. Pure
    integer arithmetic, so streams are identical on every platform.
    """

    def __init__(self, seed: int):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        sm = seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = math.prod(shape)
        u = np.fromiter((self.uniform() for _ in range(count)), dtype=np.float64, count=count)
        return (low + (high - low) * u).reshape(shape)

    def child(self, index: int) -> "Rng":
        """Independent generator derived from this one's seed and ``index``."""
        _, out = splitmix64((self.seed ^ ((index + 1) * 0xD1B54A32D192ED03)) & MASK64)
        return Rng(out)


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray, threads: int | None = None) -> np.ndarray:
    """``a @ b`` summed sequentially over the inner dimension.

    Equivalent to the triple loop ``out[i, j] = sum_k a[i, k] * b[k, j]``
    with the accumulator starting at zero and ``k`` increasing.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    dtype = np.result_type(a, b)
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)

    def rows(lo, hi):
        cols = np.ascontiguousarray(a[lo:hi].T)
        if hi - lo >= n:
            # accumulate out.T so the inner loop runs along the long axis
            out_t = np.zeros((n, hi - lo), dtype=dtype)
            tmp = np.empty_like(out_t)
            for kk in range(k):
                np.multiply(b[kk][:, None], cols[kk], out=tmp)
                out_t += tmp
            return np.ascontiguousarray(out_t.T)
        out = np.zeros((hi - lo, n), dtype=dtype)
        tmp = np.empty_like(out)
        for kk in range(k):
            np.multiply(cols[kk][:, None], b[kk], out=tmp)
            out += tmp
        return out

    return np.concatenate(map_row_chunks(rows, m, threads), axis=0) if m else np.zeros((0, n), dtype)


def seq_sum_lastdim(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis, left to right."""
    acc = np.zeros(x.shape[:-1], dtype=x.dtype)
    for j in range(x.shape[-1]):
        acc += x[..., j]
    return acc


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last dimension, got {x.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / seq_sum_lastdim(e)[..., None]


def _resize_axis(in_size: int, out_size: int):
    # align_corners=False: sample at (dst + 0.5) * in/out - 0.5, clamped at 0.
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, src - i0


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an ``H x W x C`` array, half-pixel centres.

    Matches ``torch.nn.functional.interpolate(mode="bilinear",
    align_corners=False, antialias=False)``. Each output is
    ``top + fy * (bottom - top)`` with ``top``/``bottom`` interpolated along
    x the same way, so constant inputs stay exactly constant.
    """
    if img.ndim != 3:
        raise DimensionError(f"expected H x W x C image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output size must be positive, got {out_h} x {out_w}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    h, w, _ = img.shape
    if h < 1 or w < 1:
        raise DimensionError(f"input size must be positive, got {img.shape}")
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy = fy.astype(img.dtype)[:, None, None]
    fx = fx.astype(img.dtype)[None, :, None]
    # x-interpolate only the source rows that are sampled, then lerp along y
    used, inv = np.unique(np.concatenate([y0, y1]), return_inverse=True)
    rows = img[used]
    left = rows[:, x0]
    horiz = left + fx * (rows[:, x1] - left)
    top, bottom = horiz[inv[:out_h]], horiz[inv[out_h:]]
    return top + fy * (bottom - top)


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    dt = x.dtype.type
    inner = dt(GELU_SCALE) * (x + dt(GELU_COEF) * (x * x * x))
    return dt(0.5) * x * (dt(1.0) + np.tanh(inner))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(GELU_SCALE * (x + GELU_COEF * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_COEF * x * x)


def mlp_forward(x, w1, b1, w2, b2, threads: int | None = None) -> np.ndarray:
    """Two-layer perceptron ``gelu(x w1 + b1) w2 + b2``."""
    if x.ndim != 2 or w1.shape[0] != x.shape[1] or b1.shape != (w1.shape[1],):
        raise DimensionError(f"mlp first layer mismatch: x {x.shape}, w1 {w1.shape}, b1 {b1.shape}")
    if w2.shape[0] != w1.shape[1] or b2.shape != (w2.shape[1],):
        raise DimensionError(f"mlp second layer mismatch: w2 {w2.shape}, b2 {b2.shape}")
    hidden = gelu(matmul(x, w1, threads) + b1)
    return matmul(hidden, w2, threads) + b2
