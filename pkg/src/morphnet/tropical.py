"""Hard and soft morphological primitives and max-plus linear algebra.

Vectors are 1-D float arrays with finite entries.  Only tropical matrices may
hold ``-inf`` (the max-plus additive identity).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError

NEG_INF = -np.inf


def as_vector(x, name="x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} contains non-finite entries")
    return v


def check_beta(beta) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0:
        raise InputError(f"hardness beta must be a positive finite number, got {beta}")
    return beta


def _pair(x, s):
    x = as_vector(x, "x")
    s = as_vector(s, "s")
    if x.shape != s.shape:
        raise DimensionError(f"length mismatch: len(x)={x.size}, len(s)={s.size}")
    return x, s


def dilate(x, s) -> float:
    """max_k (x_k + s_k)."""
    x, s = _pair(x, s)
    return float(np.max(x + s))


def erode(x, s) -> float:
    """min_k (x_k - s_k)."""
    x, s = _pair(x, s)
    return float(np.min(x - s))


def logsumexp_max(a: np.ndarray, beta: float, axis=-1) -> np.ndarray:
    """Soft maximum ``(1/beta) log sum exp(beta a)`` along ``axis``.

    The hard maximum is factored out first, so the result is never below it
    and no intermediate overflows.  ``-inf`` entries contribute nothing.
    """
    m = np.max(a, axis=axis, keepdims=True)
    t = np.log(np.sum(np.exp(beta * (a - m)), axis=axis, keepdims=True)) / beta
    return np.squeeze(m + t, axis=axis)


def soft_weights(a: np.ndarray, beta: float, axis=-1) -> np.ndarray:
    """softmax(beta a) along ``axis``; the gradient of :func:`logsumexp_max`."""
    m = np.max(a, axis=axis, keepdims=True)
    e = np.exp(beta * (a - m))
    return e / np.sum(e, axis=axis, keepdims=True)


def soft_dilate(x, s, beta) -> float:
    x, s = _pair(x, s)
    return float(logsumexp_max(x + s, check_beta(beta)))


def soft_erode(x, s, beta) -> float:
    x, s = _pair(x, s)
    return -float(logsumexp_max(s - x, check_beta(beta)))


def soft_dilate_grad(x, s, beta):
    """Gradient of :func:`soft_dilate` with respect to ``x`` and ``s``.

    Both are the same softmax vector: nonnegative and summing to one.
    """
    x, s = _pair(x, s)
    w = soft_weights(x + s, check_beta(beta))
    return w, w.copy()


def soft_erode_grad(x, s, beta):
    x, s = _pair(x, s)
    w = soft_weights(s - x, check_beta(beta))
    return w, -w


def hard_subgrad(x, s, kind="dilation"):
    """One-hot subgradient at the selected extremum (lowest index on ties).

    For erosion the ``s`` component carries -1.
    """
    x, s = _pair(x, s)
    dx = np.zeros_like(x)
    ds = np.zeros_like(s)
    if kind == "dilation":
        k = int(np.argmax(x + s))
        dx[k] = 1.0
        ds[k] = 1.0
    elif kind == "erosion":
        k = int(np.argmin(x - s))
        dx[k] = 1.0
        ds[k] = -1.0
    else:
        raise InputError(f"kind must be 'dilation' or 'erosion', got {kind!r}")
    return dx, ds


def as_tropical(a, name="A") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if np.any(np.isnan(m)) or np.any(m == np.inf):
        raise InputError(f"{name} may only hold finite values or -inf")
    return m


def tropical_identity(n: int) -> np.ndarray:
    eye = np.full((n, n), NEG_INF)
    np.fill_diagonal(eye, 0.0)
    return eye


def maxplus_matmul(a, b) -> np.ndarray:
    """out[i, k] = max_j (a[i, j] + b[j, k]); -inf annihilates."""
    a = as_tropical(a, "A")
    b = as_tropical(b, "B")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return np.max(a[:, :, None] + b[None, :, :], axis=1)


def maxplus_chain(*mats) -> np.ndarray:
    out = as_tropical(mats[0])
    for m in mats[1:]:
        out = maxplus_matmul(out, m)
    return out
