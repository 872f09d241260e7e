"""Central finite differences, used as the oracle for ``mine_grad``."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def grad_mismatch(analytic: np.ndarray, numeric: np.ndarray,
                  atol: float = 1e-6, rtol: float = 1e-4) -> np.ndarray:
    """Boolean mask of entries failing the looser of the two tolerances."""
    err = np.abs(analytic - numeric)
    return err > np.maximum(atol, rtol * np.abs(numeric))
