"""Patch info mining.

Every LR token ``Q[q]`` attends only to the ``M x M`` window of the HR grid
its patch covers::

    T_V = MLP(Q + softmax(phiQ(Q) . phiK(K)^T) . phiV(V))

computed independently per patch, so the token count never changes.
``mine`` is the batched kernel, ``mine_reference`` the scalar-loop oracle
(same summation order, so float64 results agree bit for bit) and
``mine_grad`` the hand-derived backward pass used for gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .encoder import ConfigError, FeatureGrid, VisualTokens
from .io import read_tensor_dict, write_tensor_dict
from .tensor import (GELU_COEF, GELU_SCALE, DimensionError, Rng, gelu, gelu_grad,
                     map_row_chunks, matmul, mlp_forward, softmax_lastdim)

# Attention scores are plain dot products, not divided by sqrt(C).
SCORE_SCALE = 1.0

_KEYS = {"phi_q": "phiQ", "phi_k": "phiK", "phi_v": "phiV", "mlp_w1": "mlpW1",
         "mlp_b1": "mlpB1", "mlp_w2": "mlpW2", "mlp_b2": "mlpB2"}


@dataclass(frozen=True)
class MiningWeights:
    phi_q: np.ndarray   # (C, C)
    phi_k: np.ndarray   # (C, C)
    phi_v: np.ndarray   # (C, C)
    mlp_w1: np.ndarray  # (C, Ch)
    mlp_b1: np.ndarray  # (Ch,)
    mlp_w2: np.ndarray  # (Ch, C)
    mlp_b2: np.ndarray  # (C,)

    def __post_init__(self):
        c = self.phi_q.shape[0]
        ch = self.mlp_w1.shape[1] if self.mlp_w1.ndim == 2 else -1
        expected = {"phi_q": (c, c), "phi_k": (c, c), "phi_v": (c, c), "mlp_w1": (c, ch),
                    "mlp_b1": (ch,), "mlp_w2": (ch, c), "mlp_b2": (c,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def channels(self) -> int:
        return self.phi_q.shape[0]

    @property
    def hidden(self) -> int:
        return self.mlp_w1.shape[1]

    @classmethod
    def init(cls, channels: int, hidden: int | None = None, seed: int = 0,
             dtype=np.float64) -> "MiningWeights":
        """Seeded uniform init; ``hidden`` defaults to ``4 * channels``."""
        hidden = 4 * channels if hidden is None else hidden
        rng = Rng(seed)

        def uniform(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform_array(shape, -bound, bound).astype(dtype)

        c = channels
        return cls(uniform((c, c), c), uniform((c, c), c), uniform((c, c), c),
                   uniform((c, hidden), c), uniform(hidden, c),
                   uniform((hidden, c), hidden), uniform(c, hidden))

    def astype(self, dtype) -> "MiningWeights":
        return MiningWeights(**{f.name: getattr(self, f.name).astype(dtype) for f in fields(self)})

    def as_dict(self) -> dict[str, np.ndarray]:
        return {key: getattr(self, name) for name, key in _KEYS.items()}

    def save(self, directory) -> None:
        write_tensor_dict(directory, self.as_dict())

    @classmethod
    def load(cls, directory, dtype=np.float64) -> "MiningWeights":
        d = read_tensor_dict(directory, _KEYS.values(), dtype)
        return cls(**{name: d[key] for name, key in _KEYS.items()})


@dataclass(frozen=True)
class SubregionMap:
    """``entries[q]`` lists the flat HR-grid indices owned by LR patch ``q``.

    Indices address a ``grid_side x grid_side`` grid; windows are row-major
    and so is the order inside each window.
    """

    n: int
    window: int
    grid_side: int
    entries: np.ndarray  # (n*n, window*window) int64

    @property
    def num_patches(self) -> int:
        return self.n * self.n


def window_map(n: int, window: int, grid_side: int, row0: int = 0, col0: int = 0) -> SubregionMap:
    """Map an ``n x n`` patch grid onto windows starting at ``(row0, col0)``."""
    if n < 1 or window < 1:
        raise ConfigError(f"n and window must be >= 1, got n={n}, window={window}")
    if row0 + n * window > grid_side or col0 + n * window > grid_side:
        raise ConfigError(f"{n}x{window} windows at ({row0}, {col0}) overflow a {grid_side} grid")
    pi, pj, wi, wj = np.meshgrid(np.arange(n), np.arange(n), np.arange(window), np.arange(window),
                                 indexing="ij")
    rows = row0 + pi * window + wi
    cols = col0 + pj * window + wj
    entries = (rows * grid_side + cols).reshape(n * n, window * window).astype(np.int64)
    return SubregionMap(n=n, window=window, grid_side=grid_side, entries=entries)


def build_subregion_map(n: int, window: int) -> SubregionMap:
    return window_map(n, window, n * window)


def gather_kv(grid: FeatureGrid, smap: SubregionMap) -> tuple[np.ndarray, np.ndarray]:
    """Keys and values ``(N, M*M, C)``: the grid features in map order."""
    if smap.grid_side != grid.side:
        raise ConfigError(f"map addresses a {smap.grid_side} grid but the feature grid side is {grid.side}")
    flat = grid.data.reshape(grid.side * grid.side, grid.channels)
    keys = flat[smap.entries]
    return keys, keys.copy()


def _check_shapes(q: np.ndarray, k: np.ndarray, v: np.ndarray, w: MiningWeights) -> None:
    if q.ndim != 2 or k.ndim != 3 or v.shape != k.shape:
        raise DimensionError(f"expected Q (N, C), K and V (N, M*M, C); got {q.shape}, {k.shape}, {v.shape}")
    if k.shape[0] != q.shape[0] or k.shape[2] != q.shape[1] or k.shape[1] < 1:
        raise DimensionError(f"K/V {k.shape} do not match Q {q.shape}")
    if w.channels != q.shape[1]:
        raise DimensionError(f"weights have C={w.channels}, tokens have C={q.shape[1]}")


def _tokens(q) -> np.ndarray:
    return q.data if isinstance(q, VisualTokens) else np.asarray(q)


def _mine_block(q, k, v, w: MiningWeights) -> np.ndarray:
    n, m2, c = k.shape
    qp = matmul(q, w.phi_q, threads=1)
    kp = matmul(k.reshape(n * m2, c), w.phi_k, threads=1).reshape(n, m2, c)
    vp = matmul(v.reshape(n * m2, c), w.phi_v, threads=1).reshape(n, m2, c)
    scores = np.zeros((n, m2), dtype=qp.dtype)
    for j in range(c):
        scores += qp[:, None, j] * kp[:, :, j]
    if SCORE_SCALE != 1.0:
        scores = scores * scores.dtype.type(SCORE_SCALE)
    attn = softmax_lastdim(scores)
    ctx = np.zeros((n, c), dtype=qp.dtype)
    for j in range(m2):
        ctx += attn[:, j, None] * vp[:, j, :]
    return mlp_forward(q + ctx, w.mlp_w1, w.mlp_b1, w.mlp_w2, w.mlp_b2, threads=1)


def mine(q, k: np.ndarray, v: np.ndarray, w: MiningWeights, threads: int | None = None) -> VisualTokens:
    """Batched patch info mining; patches are split across threads."""
    qd = _tokens(q)
    _check_shapes(qd, k, v, w)
    blocks = map_row_chunks(lambda lo, hi: _mine_block(qd[lo:hi], k[lo:hi], v[lo:hi], w),
                            qd.shape[0], threads)
    return VisualTokens(np.concatenate(blocks, axis=0))


def attention_weights(q, k: np.ndarray, w: MiningWeights) -> np.ndarray:
    """Per-patch softmax weights ``(N, M*M)``."""
    qd = _tokens(q)
    n, m2, c = k.shape
    qp = matmul(qd, w.phi_q)
    kp = matmul(k.reshape(n * m2, c), w.phi_k).reshape(n, m2, c)
    scores = np.zeros((n, m2), dtype=qp.dtype)
    for j in range(c):
        scores += qp[:, None, j] * kp[:, :, j]
    return softmax_lastdim(scores * scores.dtype.type(SCORE_SCALE))


# --------------------------------------------------------------------------
# Scalar oracle
# --------------------------------------------------------------------------

def _scalars(x: np.ndarray):
    # float64 -> Python floats (same IEEE ops, faster); float32 stays numpy scalars
    if x.dtype == np.float64:
        return x.tolist()
    if x.ndim == 1:
        return list(x)
    return [_scalars(row) for row in x]


def mine_reference(q, k: np.ndarray, v: np.ndarray, w: MiningWeights) -> VisualTokens:
    """Scalar-loop evaluation of the mining formula. Ground truth for ``mine``."""
    qd = _tokens(q)
    _check_shapes(qd, k, v, w)
    dtype = np.result_type(qd, k, v, w.phi_q)
    dt = dtype.type
    zero, one, half = dt(0.0), dt(1.0), dt(0.5)
    g_scale, g_coef, s_scale = dt(GELU_SCALE), dt(GELU_COEF), dt(SCORE_SCALE)
    n, m2, c = k.shape
    ch = w.hidden
    Q, K, V = (_scalars(x.astype(dtype)) for x in (qd, k, v))
    PQ, PK, PV, W1, B1, W2, B2 = (_scalars(x.astype(dtype)) for x in
                                  (w.phi_q, w.phi_k, w.phi_v, w.mlp_w1, w.mlp_b1, w.mlp_w2, w.mlp_b2))

    def project(vec, mat):
        out = []
        for col in range(c):
            acc = zero
            for i in range(c):
                acc += vec[i] * mat[i][col]
            out.append(acc)
        return out

    result = np.empty((n, c), dtype=dtype)
    for p in range(n):
        qp = project(Q[p], PQ)
        kp = [project(K[p][m], PK) for m in range(m2)]
        vp = [project(V[p][m], PV) for m in range(m2)]
        scores = []
        for m in range(m2):
            acc = zero
            for i in range(c):
                acc += qp[i] * kp[m][i]
            scores.append(acc * s_scale if SCORE_SCALE != 1.0 else acc)
        top = max(scores)
        exps = [np.exp(dt(s - top)) for s in scores]
        total = zero
        for e in exps:
            total += e
        attn = [e / total for e in exps]
        h = []
        for i in range(c):
            acc = zero
            for m in range(m2):
                acc += attn[m] * vp[m][i]
            h.append(Q[p][i] + acc)
        hidden = []
        for j in range(ch):
            acc = zero
            for i in range(c):
                acc += h[i] * W1[i][j]
            z = acc + B1[j]
            inner = g_scale * (z + g_coef * (z * z * z))
            hidden.append(half * z * (one + np.tanh(dt(inner))))
        for i in range(c):
            acc = zero
            for j in range(ch):
                acc += hidden[j] * W2[j][i]
            result[p, i] = acc + B2[i]
    return VisualTokens(result)


# --------------------------------------------------------------------------
# Backward
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MiningGrads:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    phi_q: np.ndarray
    phi_k: np.ndarray
    phi_v: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray

    def weights(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _KEYS}


def mine_grad(q, k: np.ndarray, v: np.ndarray, w: MiningWeights, upstream: np.ndarray) -> MiningGrads:
    """Gradients of ``sum(upstream * mine(q, k, v, w))`` w.r.t. every input."""
    qd = np.asarray(_tokens(q), dtype=np.float64)
    _check_shapes(qd, k, v, w)
    if upstream.shape != qd.shape:
        raise DimensionError(f"upstream {upstream.shape} does not match output {qd.shape}")
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = SCORE_SCALE

    # forward, keeping intermediates
    qp = qd @ w.phi_q
    kp = k @ w.phi_k
    vp = v @ w.phi_v
    attn = softmax_lastdim(s * np.einsum("nc,nmc->nm", qp, kp))
    ctx = np.einsum("nm,nmc->nc", attn, vp)
    h = qd + ctx
    z1 = h @ w.mlp_w1 + w.mlp_b1
    g = gelu(z1)

    # backward
    d_w2 = g.T @ upstream
    d_b2 = upstream.sum(axis=0)
    d_z1 = (upstream @ w.mlp_w2.T) * gelu_grad(z1)
    d_w1 = h.T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    d_h = d_z1 @ w.mlp_w1.T
    d_attn = np.einsum("nc,nmc->nm", d_h, vp)
    d_vp = attn[:, :, None] * d_h[:, None, :]
    d_scores = s * attn * (d_attn - (attn * d_attn).sum(axis=1, keepdims=True))
    d_qp = np.einsum("nm,nmc->nc", d_scores, kp)
    d_kp = d_scores[:, :, None] * qp[:, None, :]
    return MiningGrads(
        q=d_h + d_qp @ w.phi_q.T,
        k=d_kp @ w.phi_k.T,
        v=d_vp @ w.phi_v.T,
        phi_q=qd.T @ d_qp,
        phi_k=np.einsum("nmi,nmj->ij", k, d_kp),
        phi_v=np.einsum("nmi,nmj->ij", v, d_vp),
        mlp_w1=d_w1, mlp_b1=d_b1, mlp_w2=d_w2, mlp_b2=d_b2,
    )
