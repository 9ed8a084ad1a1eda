"""Sliding-window grayscale morphology and the 2D morphological block.

Images are float arrays: ``(H, W)`` for single-channel operators and
``(C, H, W)`` inside blocks.  A structuring element of size ``a x b`` is
anchored at cell ``((a - 1) // 2, (b - 1) // 2)``, the centre for odd sizes
and the top-left of the central 2x2 for even sizes.

With anchor ``(ca, cb)`` the operators are::

    dilate(X, S)(i, j) = max_{l, m} X(i - (l - ca), j - (m - cb)) + S(l, m)
    erode(X, S)(i, j)  = min_{l, m} X(i + (l - ca), j + (m - cb)) - S(l, m)

Padding modes: ``"replicate"`` (edge values), ``"infinite"`` (-inf for
dilation, +inf for erosion, so borders never win) and ``"zero"``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError
from .tropical import check_beta, dilate, erode, logsumexp_max, soft_weights

log = logging.getLogger(__name__)

PADDINGS = ("replicate", "infinite", "zero")


def as_image(x, name="X", finite=True) -> np.ndarray:
    img = np.asarray(x, dtype=np.float64)
    if img.ndim != 2 or 0 in img.shape:
        raise DimensionError(f"{name} must be a non-empty (H, W) array, got shape {img.shape}")
    if finite and not np.all(np.isfinite(img)):
        raise InputError(f"{name} contains non-finite entries")
    return img


def _as_planes(x, name="X") -> np.ndarray:
    img = np.asarray(x, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or 0 in img.shape:
        raise DimensionError(f"{name} must be (H, W) or (C, H, W), got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InputError(f"{name} contains non-finite entries")
    return img


def anchor(a: int, b: int):
    if a % 2 == 0 or b % 2 == 0:
        log.info("even structuring element %dx%d: anchored at its top-left centre cell", a, b)
    return (a - 1) // 2, (b - 1) // 2


def reflect(s) -> np.ndarray:
    """Rotate a structuring element by 180 degrees (last two axes)."""
    return np.asarray(s)[..., ::-1, ::-1]


def _pad(planes, before, after, mode, fill):
    widths = ((0, 0), (before[0], after[0]), (before[1], after[1]))
    if mode == "replicate":
        return np.pad(planes, widths, mode="edge")
    if mode == "infinite":
        return np.pad(planes, widths, mode="constant", constant_values=fill)
    if mode == "zero":
        return np.pad(planes, widths, mode="constant", constant_values=0.0)
    raise InputError(f"unknown padding {mode!r}; expected one of {PADDINGS}")


def _unpad_grad(gpad, before, after, shape, mode):
    _, h, w = shape
    t, l = before
    g = gpad.copy()
    if mode == "replicate":
        # fold border rows/cols back onto the edge pixels they copied
        g[:, t, :] += g[:, :t, :].sum(axis=1)
        g[:, t + h - 1, :] += g[:, t + h :, :].sum(axis=1)
        g[:, :, l] += g[:, :, :l].sum(axis=2)
        g[:, :, l + w - 1] += g[:, :, l + w :].sum(axis=2)
    return g[:, t : t + h, l : l + w]


def _windows(planes, s_shape, kind, padding):
    """Padded windows ``P[i, j, c, l, m]`` aligned with the element S(c, l, m)."""
    _, a, b = s_shape
    ca, cb = anchor(a, b)
    if kind == "dilation":
        before, after, fill = (a - 1 - ca, b - 1 - cb), (ca, cb), -np.inf
    else:
        before, after, fill = (ca, cb), (a - 1 - ca, b - 1 - cb), np.inf
    xpad = _pad(planes, before, after, padding, fill)
    win = sliding_window_view(xpad, (a, b), axis=(1, 2))  # (C, H, W, a, b)
    win = np.moveaxis(win, 0, 2)  # (H, W, C, a, b)
    if kind == "dilation":
        # window index l addresses X(i + l - (a-1-ca)); flip so it pairs with S(a-1-l)
        win = win[..., ::-1, ::-1]
    return win, before, after


def _check_se(s, planes):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[0] != planes.shape[0]:
        raise DimensionError(f"structuring element shape {s.shape} does not match {planes.shape[0]} channel(s)")
    if not np.all(np.isfinite(s)):
        raise InputError("structuring element contains non-finite entries")
    if s.shape[1] > planes.shape[1] or s.shape[2] > planes.shape[2]:
        raise DimensionError(f"structuring element {s.shape[1:]} larger than image {planes.shape[1:]}")
    return s


def morph_filter(planes, s, kind="dilation", beta=None, padding="replicate"):
    """One dilation or erosion filter over all channels jointly -> (H, W).

    The max/min runs over every channel and window offset, i.e. the flattened
    ``C*a*b`` window is dilated with the flattened element.
    """
    planes = _as_planes(planes)
    s = _check_se(s, planes)
    win, _, _ = _windows(planes, s.shape, kind, padding)
    h, w = planes.shape[1:]
    flat = win.reshape(h, w, -1)
    sf = s.reshape(-1)
    if kind == "dilation":
        a = flat + sf
        return a.max(axis=-1) if beta is None else logsumexp_max(a, check_beta(beta))
    a = sf - flat
    return -(a.max(axis=-1) if beta is None else logsumexp_max(a, check_beta(beta)))


def dilate2d(x, s, padding="replicate", beta=None) -> np.ndarray:
    """Grayscale dilation of an (H, W) image by an (a, b) structuring element."""
    x = as_image(x)
    return morph_filter(x, np.asarray(s, dtype=np.float64), "dilation", beta, padding)


def erode2d(x, s, padding="replicate", beta=None) -> np.ndarray:
    """Grayscale erosion; pairs with :func:`dilate2d` under 180-degree reflection."""
    x = as_image(x)
    return morph_filter(x, np.asarray(s, dtype=np.float64), "erosion", beta, padding)


def flatten_window_equiv(x, s, i, j, kind="dilation") -> float:
    """Value at interior pixel (i, j) via the 1-D neuron on the flattened window."""
    x = as_image(x)
    s = np.asarray(s, dtype=np.float64)
    a, b = s.shape
    ca, cb = anchor(a, b)
    ls = np.arange(a) - ca
    ms = np.arange(b) - cb
    if kind == "dilation":
        rows, cols = i - ls, j - ms
    else:
        rows, cols = i + ls, j + ms
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= x.shape[0] or cols.max() >= x.shape[1]:
        raise DimensionError(f"window at ({i}, {j}) leaves the image")
    window = x[np.ix_(rows, cols)].reshape(-1)
    if kind == "dilation":
        return dilate(window, s.reshape(-1))
    return erode(window, s.reshape(-1))


def _filter_backward(planes, s, kind, beta, padding, grad_out):
    """Gradients of ``sum(grad_out * morph_filter(...))`` w.r.t. planes and s."""
    win, before, after = _windows(planes, s.shape, kind, padding)
    h, w = planes.shape[1:]
    flat = win.reshape(h, w, -1)
    sf = s.reshape(-1)
    a = flat + sf if kind == "dilation" else sf - flat
    if beta is None:
        wts = np.zeros_like(a)
        np.put_along_axis(wts, a.argmax(axis=-1)[..., None], 1.0, axis=-1)
    else:
        wts = soft_weights(a, beta)
    wts = np.nan_to_num(wts)  # all -inf windows cannot occur, guard anyway
    g = grad_out[..., None] * wts  # (H, W, C*a*b)
    if kind == "dilation":
        ds, dwin = g.sum(axis=(0, 1)), g
    else:
        ds, dwin = -g.sum(axis=(0, 1)), g
    c, sa, sb = s.shape
    dwin = dwin.reshape(h, w, c, sa, sb)
    if kind == "dilation":
        dwin = dwin[..., ::-1, ::-1]
    pad_shape = (c, h + sa - 1, w + sb - 1)
    gpad = np.zeros(pad_shape)
    for l in range(sa):
        for m in range(sb):
            gpad[:, l : l + h, m : m + w] += np.moveaxis(dwin[:, :, :, l, m], 2, 0)
    dx = _unpad_grad(gpad, before, after, planes.shape, padding)
    return dx, ds.reshape(s.shape)


@dataclass
class MorphBlock2D:
    """Dilation-erosion layer of 2D filters followed by per-pixel linear maps.

    ``s_plus``: (n, C, a, b); ``s_minus``: (m, C, a, b); ``w``: (c, n + m);
    ``b``: optional (c,) offsets.
    """

    s_plus: np.ndarray
    s_minus: np.ndarray
    w: np.ndarray
    b: Optional[np.ndarray] = None
    beta: Optional[float] = None
    padding: str = "replicate"

    def __post_init__(self):
        self.s_plus = np.asarray(self.s_plus, dtype=np.float64)
        self.s_minus = np.asarray(self.s_minus, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.s_plus.ndim != 4 or self.s_minus.ndim != 4:
            raise DimensionError("structuring elements must be (count, C, a, b) arrays")
        if self.s_plus.shape[1:] != self.s_minus.shape[1:] and 0 not in (
            self.s_plus.shape[0],
            self.s_minus.shape[0],
        ):
            raise DimensionError("dilation and erosion elements differ in shape")
        if self.w.ndim != 2 or self.w.shape[1] != self.n_dilation + self.n_erosion:
            raise DimensionError(f"w must be (c, {self.n_dilation + self.n_erosion})")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
            if self.b.shape != (self.w.shape[0],):
                raise DimensionError("b must have one entry per output map")
        if self.padding not in PADDINGS:
            raise InputError(f"unknown padding {self.padding!r}")
        if self.beta is not None:
            self.beta = check_beta(self.beta)

    @property
    def n_dilation(self):
        return self.s_plus.shape[0]

    @property
    def n_erosion(self):
        return self.s_minus.shape[0]

    @property
    def se_shape(self):
        return (self.s_plus if self.n_dilation else self.s_minus).shape[1:]

    @property
    def in_channels(self):
        return self.se_shape[0]

    @property
    def out_channels(self):
        return self.w.shape[0]

    def tag(self) -> str:
        _, a, b = self.se_shape
        n, m = self.n_dilation, self.n_erosion
        head = f"DE_{n}" if n == m else f"D_{n}E_{m}"
        return f"{head}^{{{a}x{b}}}-L_{self.out_channels}"

    def params(self) -> dict:
        p = {"s_plus": self.s_plus, "s_minus": self.s_minus, "w": self.w}
        if self.b is not None:
            p["b"] = self.b
        return p

    def with_params(self, p) -> "MorphBlock2D":
        return MorphBlock2D(p["s_plus"], p["s_minus"], p["w"], p.get("b"), self.beta, self.padding)

    def feature_maps(self, planes) -> np.ndarray:
        maps = [morph_filter(planes, s, "dilation", self.beta, self.padding) for s in self.s_plus]
        maps += [morph_filter(planes, s, "erosion", self.beta, self.padding) for s in self.s_minus]
        return np.stack(maps)


def forward_block2d(block: MorphBlock2D, x) -> np.ndarray:
    """(C, H, W) or (H, W) input -> (c, H, W) output maps."""
    planes = _as_planes(x)
    if planes.shape[0] != block.in_channels:
        raise DimensionError(f"block expects {block.in_channels} channel(s), got {planes.shape[0]}")
    z = block.feature_maps(planes)
    out = np.tensordot(block.w, z, axes=(1, 0))
    if block.b is not None:
        out = out + block.b[:, None, None]
    return out


def backward_block2d(block: MorphBlock2D, x, upstream):
    """Gradients of ``sum(upstream * forward_block2d(block, x))``.

    Returns ``(dx, grads)`` with ``grads`` keyed like :meth:`MorphBlock2D.params`.
    """
    planes = _as_planes(x)
    z = block.feature_maps(planes)
    g = np.asarray(upstream, dtype=np.float64).reshape(block.out_channels, *planes.shape[1:])
    grads = {"w": np.tensordot(g, z, axes=((1, 2), (1, 2)))}
    if block.b is not None:
        grads["b"] = g.sum(axis=(1, 2))
    gz = np.tensordot(block.w, g, axes=(0, 0))  # (n + m, H, W)
    dx = np.zeros_like(planes)
    ds_plus = np.zeros_like(block.s_plus)
    ds_minus = np.zeros_like(block.s_minus)
    n = block.n_dilation
    for k, s in enumerate(block.s_plus):
        dxk, ds_plus[k] = _filter_backward(planes, s, "dilation", block.beta, block.padding, gz[k])
        dx += dxk
    for k, s in enumerate(block.s_minus):
        dxk, ds_minus[k] = _filter_backward(planes, s, "erosion", block.beta, block.padding, gz[n + k])
        dx += dxk
    grads["s_plus"] = ds_plus
    grads["s_minus"] = ds_minus
    return dx.reshape(np.shape(x)), grads


def init_block2d(rng, in_channels, n, m, c, size=(3, 3), beta=None, padding="replicate", with_bias=False):
    a, b = size
    bound = 1.0 / np.sqrt(n + m)
    return MorphBlock2D(
        rng.uniform(-0.5, 0.5, size=(n, in_channels, a, b)),
        rng.uniform(-0.5, 0.5, size=(m, in_channels, a, b)),
        rng.uniform(-bound, bound, size=(c, n + m)),
        np.zeros(c) if with_bias else None,
        beta,
        padding,
    )


def maxpool2(x) -> np.ndarray:
    """2x2 stride-2 max pooling over the last two axes; odd trailing row/col dropped."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise DimensionError(f"cannot pool a {h}x{w} map")
    if h % 2 or w % 2:
        log.info("maxpool2: dropping odd trailing row/column of %dx%d map", h, w)
    x = x[..., : h - h % 2, : w - w % 2]
    return x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2).max(axis=(-3, -1))


def upsample_nearest2(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def sigmoid_map(x) -> np.ndarray:
    from .network import sigmoid

    return sigmoid(np.asarray(x, dtype=np.float64))


def batch_norm(x, mean=None, var=None, gamma=1.0, shift=0.0, eps=1e-5):
    """Per-channel normalisation of a (C, H, W) stack.

    Uses the given running statistics, or the stack's own when omitted.
    """
    x = np.asarray(x, dtype=np.float64)
    if mean is None:
        mean = x.mean(axis=(-2, -1), keepdims=True)
    else:
        mean = np.asarray(mean, dtype=np.float64).reshape(-1, 1, 1)
    if var is None:
        var = x.var(axis=(-2, -1), keepdims=True)
    else:
        var = np.asarray(var, dtype=np.float64).reshape(-1, 1, 1)
    return gamma * (x - mean) / np.sqrt(var + eps) + shift


def dehaze_reconstruct(hazy, transmittance, airlight) -> np.ndarray:
    """Haze-free estimate ``min((I - K) / t, 1)``, clamped below at 0."""
    i = np.asarray(hazy, dtype=np.float64)
    t = np.asarray(transmittance, dtype=np.float64)
    k = np.asarray(airlight, dtype=np.float64)
    if not (i.shape == t.shape == k.shape):
        raise DimensionError(f"shape mismatch: I{i.shape} t{t.shape} K{k.shape}")
    if np.any(t <= 0) or np.any(t > 1):
        raise InputError("transmittance must lie in (0, 1]")
    return np.clip((i - k) / t, 0.0, 1.0)


def synthesize_haze(clear, transmittance, airlight) -> np.ndarray:
    """Hazy image ``I = t J + K``."""
    return np.asarray(transmittance) * np.asarray(clear) + np.asarray(airlight)


def toy_unet(x, rng, beta=None, width=2):
    """Two-down/two-up morphological encoder-decoder with random filters.

    Returns the sigmoid probability map; inputs need sides divisible by 4.
    """
    planes = _as_planes(x)
    _, h, w = planes.shape
    if h % 4 or w % 4:
        raise DimensionError("toy U-Net needs height and width divisible by 4")
    c0 = planes.shape[0]
    enc1 = forward_block2d(init_block2d(rng, c0, width, width, width, beta=beta), planes)
    enc2 = forward_block2d(init_block2d(rng, width, width, width, width, beta=beta), maxpool2(enc1))
    mid = forward_block2d(init_block2d(rng, width, width, width, width, beta=beta), maxpool2(enc2))
    mid = batch_norm(mid)
    up2 = np.concatenate([upsample_nearest2(mid), enc2])
    dec2 = forward_block2d(init_block2d(rng, 2 * width, width, width, width, beta=beta), up2)
    up1 = np.concatenate([upsample_nearest2(dec2), enc1])
    out = forward_block2d(init_block2d(rng, 2 * width, width, width, 1, beta=beta), up1)
    return sigmoid_map(out[0])
