"""Training losses and their gradients with respect to the prediction."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

BCE_EPS = 1e-7
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2


def _same_shape(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def loss_mse(pred, target) -> float:
    pred, target = _same_shape(pred, target)
    return float(np.mean((pred - target) ** 2))


def grad_mse(pred, target) -> np.ndarray:
    pred, target = _same_shape(pred, target)
    return 2.0 * (pred - target) / pred.size


def loss_bce(pred, target) -> float:
    pred, target = _same_shape(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def grad_bce(pred, target) -> np.ndarray:
    pred, target = _same_shape(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return (p - target) / (p * (1.0 - p)) / pred.size


def _as_planes(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[None]
    if img.ndim == 3:
        return img
    raise DimensionError(f"expected an (H, W) or (C, H, W) image, got shape {img.shape}")


def _patches(planes, patch, stride):
    ph, pw = patch
    _, h, w = planes.shape
    if ph > h or pw > w or ph < 1 or pw < 1:
        raise DimensionError(f"patch {patch} does not fit image of size {h}x{w}")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    view = sliding_window_view(planes, (ph, pw), axis=(1, 2))
    return view[:, ::stride, ::stride].reshape(-1, ph * pw)


def _patch_size(patch):
    if np.isscalar(patch):
        return int(patch), int(patch)
    ph, pw = patch
    return int(ph), int(pw)


def _ssim_terms(pa, pb):
    mu_a = pa.mean(axis=1)
    mu_b = pb.mean(axis=1)
    da = pa - mu_a[:, None]
    db = pb - mu_b[:, None]
    var_a = np.mean(da * da, axis=1)
    var_b = np.mean(db * db, axis=1)
    cov = np.mean(da * db, axis=1)
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a**2 + mu_b**2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, da, db, a1, a2, b1, b2


def ssim_patches(img_a, img_b, patch=8, stride=1) -> np.ndarray:
    """SSIM of every patch pair (uniform window, population statistics, L=1)."""
    a, b = _same_shape(img_a, img_b)
    patch = _patch_size(patch)
    pa = _patches(_as_planes(a), patch, stride)
    pb = _patches(_as_planes(b), patch, stride)
    _, _, _, _, a1, a2, b1, b2 = _ssim_terms(pa, pb)
    return a1 * a2 / (b1 * b2)


def loss_dssim(img_a, img_b, patch=8, stride=1) -> float:
    """Mean over patches of (1 - SSIM) / 2.

    SSIM never exceeds 1, so round-off below zero is clamped away.
    """
    return max(0.0, float(np.mean((1.0 - ssim_patches(img_a, img_b, patch, stride)) / 2.0)))


def grad_dssim(img_a, img_b, patch=8, stride=1) -> np.ndarray:
    """Gradient of :func:`loss_dssim` with respect to ``img_b``."""
    a, b = _same_shape(img_a, img_b)
    ph, pw = _patch_size(patch)
    planes_a, planes_b = _as_planes(a), _as_planes(b)
    pa = _patches(planes_a, (ph, pw), stride)
    pb = _patches(planes_b, (ph, pw), stride)
    mu_a, mu_b, da, db, a1, a2, b1, b2 = _ssim_terms(pa, pb)
    n = ph * pw
    s = a1 * a2 / (b1 * b2)
    dpb = (2.0 / n) / (b1 * b2)[:, None] * (
        (mu_a * a2)[:, None] + a1[:, None] * da - s[:, None] * ((mu_b * b2)[:, None] + b1[:, None] * db)
    )
    dpb *= -0.5 / pb.shape[0]

    c, h, w = planes_b.shape
    rows = range(0, h - ph + 1, stride)
    cols = range(0, w - pw + 1, stride)
    grad = np.zeros_like(planes_b)
    dpb = dpb.reshape(c, len(rows), len(cols), ph, pw)
    for ri, r in enumerate(rows):
        for ci, q in enumerate(cols):
            grad[:, r : r + ph, q : q + pw] += dpb[:, ri, ci]
    return grad.reshape(b.shape)
