"""Dilation-erosion layers, linear layers and stacked networks.

Every layer works on batches: inputs of shape ``(N, d_in)`` map to outputs
of shape ``(N, d_out)``.  Single vectors are accepted by :func:`forward` and
promoted to a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .errors import DimensionError, InputError
from .tropical import check_beta, logsumexp_max, soft_weights


def _finite_matrix(a, name, cols=None) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1 and m.size == 0:
        m = m.reshape(0, cols or 0)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"{name} contains non-finite entries")
    return m


@dataclass
class DilationErosionLayer:
    """``n`` dilation neurons followed by ``m`` erosion neurons.

    ``s_plus`` has one row per dilation neuron, ``s_minus`` one row per
    erosion neuron.  With ``with_bias`` the input gets a trailing constant 0
    and each structuring element one extra column.  ``beta=None`` selects
    hard max/min; a positive ``beta`` selects the log-sum-exp relaxation.
    """

    s_plus: np.ndarray
    s_minus: np.ndarray
    with_bias: bool = False
    beta: Optional[float] = None

    def __post_init__(self):
        self.s_plus = _finite_matrix(self.s_plus, "s_plus")
        self.s_minus = _finite_matrix(self.s_minus, "s_minus")
        if self.s_plus.shape[0] == 0:
            self.s_plus = self.s_plus.reshape(0, self.s_minus.shape[1])
        if self.s_minus.shape[0] == 0:
            self.s_minus = self.s_minus.reshape(0, self.s_plus.shape[1])
        if self.s_plus.shape[1] != self.s_minus.shape[1]:
            raise DimensionError("s_plus and s_minus must have the same number of columns")
        if self.n_dilation + self.n_erosion < 1:
            raise DimensionError("a dilation-erosion layer needs at least one neuron")
        if self.with_bias and self.s_plus.shape[1] < 2:
            raise DimensionError("biased layer needs at least one input column plus the bias column")
        if self.beta is not None:
            self.beta = check_beta(self.beta)

    @property
    def n_dilation(self) -> int:
        return self.s_plus.shape[0]

    @property
    def n_erosion(self) -> int:
        return self.s_minus.shape[0]

    @property
    def input_dim(self) -> int:
        return self.s_plus.shape[1] - int(self.with_bias)

    @property
    def output_dim(self) -> int:
        return self.n_dilation + self.n_erosion

    @property
    def hard(self) -> bool:
        return self.beta is None

    def params(self) -> dict:
        return {"s_plus": self.s_plus, "s_minus": self.s_minus}

    def with_params(self, params: dict) -> "DilationErosionLayer":
        return replace(self, s_plus=params["s_plus"], s_minus=params["s_minus"])

    def tag(self) -> str:
        return f"D{self.n_dilation}E{self.n_erosion}"

    def augment(self, x: np.ndarray) -> np.ndarray:
        if self.with_bias:
            return np.concatenate([x, np.zeros((x.shape[0], 1))], axis=1)
        return x

    def forward(self, x: np.ndarray):
        xa = self.augment(x)
        a_plus = xa[:, None, :] + self.s_plus[None, :, :]
        a_minus = self.s_minus[None, :, :] - xa[:, None, :]
        if self.hard:
            z_plus = a_plus.max(axis=2)
            z_minus = -a_minus.max(axis=2)
        else:
            z_plus = logsumexp_max(a_plus, self.beta, axis=2)
            z_minus = -logsumexp_max(a_minus, self.beta, axis=2)
        return np.concatenate([z_plus, z_minus], axis=1), (a_plus, a_minus)

    def selection_weights(self, cache):
        """Per-example, per-neuron weights over input coordinates.

        One-hot at the first extremum in hard mode, softmax in soft mode.
        """
        a_plus, a_minus = cache
        if self.hard:
            w_plus = _one_hot_argmax(a_plus)
            w_minus = _one_hot_argmax(a_minus)
        else:
            w_plus = soft_weights(a_plus, self.beta, axis=2)
            w_minus = soft_weights(a_minus, self.beta, axis=2)
        return w_plus, w_minus

    def backward(self, cache, grad_out: np.ndarray):
        w_plus, w_minus = self.selection_weights(cache)
        n = self.n_dilation
        g_plus = grad_out[:, :n, None] * w_plus
        g_minus = grad_out[:, n:, None] * w_minus
        grads = {"s_plus": g_plus.sum(axis=0), "s_minus": -g_minus.sum(axis=0)}
        dx = g_plus.sum(axis=1) + g_minus.sum(axis=1)
        if self.with_bias:
            dx = dx[:, :-1]
        return dx, grads


def _one_hot_argmax(a: np.ndarray) -> np.ndarray:
    idx = np.argmax(a, axis=-1)
    out = np.zeros_like(a)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


@dataclass
class LinearLayer:
    """``y = x W^T + b``; ``b=None`` means no offset."""

    w: np.ndarray
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w = _finite_matrix(self.w, "w")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
            if self.b.shape != (self.w.shape[0],):
                raise DimensionError(f"b must have length {self.w.shape[0]}")
            if not np.all(np.isfinite(self.b)):
                raise InputError("b contains non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w.shape[0]

    def params(self) -> dict:
        p = {"w": self.w}
        if self.b is not None:
            p["b"] = self.b
        return p

    def with_params(self, params: dict) -> "LinearLayer":
        return replace(self, w=params["w"], b=params.get("b"))

    def tag(self) -> str:
        return "L"

    def forward(self, x):
        y = x @ self.w.T
        if self.b is not None:
            y = y + self.b
        return y, x

    def backward(self, cache, grad_out):
        grads = {"w": grad_out.T @ cache}
        if self.b is not None:
            grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.w, grads


@dataclass
class Sigmoid:
    dim: Optional[int] = None

    @property
    def input_dim(self):
        return self.dim

    @property
    def output_dim(self):
        return self.dim

    def params(self) -> dict:
        return {}

    def with_params(self, params):
        return self

    def tag(self) -> str:
        return "S"

    def forward(self, x):
        y = sigmoid(x)
        return y, y

    def backward(self, cache, grad_out):
        return grad_out * cache * (1.0 - cache), {}


Layer = Union[DilationErosionLayer, LinearLayer, Sigmoid]


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class NetworkSpec:
    input_dim: int
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("a network needs at least one layer")
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Sigmoid):
                layer.dim = width
                continue
            if layer.input_dim != width:
                raise DimensionError(
                    f"layer {i} ({layer.tag()}) expects input width {layer.input_dim}, got {width}"
                )
            width = layer.output_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def arch_tag(self) -> str:
        return "->".join(layer.tag() for layer in self.layers)

    def params(self) -> list:
        return [layer.params() for layer in self.layers]

    def with_params(self, params: list) -> "NetworkSpec":
        layers = [layer.with_params(p) for layer, p in zip(self.layers, params)]
        return NetworkSpec(self.input_dim, layers)

    def hardened(self) -> "NetworkSpec":
        layers = [
            replace(layer, beta=None) if isinstance(layer, DilationErosionLayer) else layer
            for layer in self.layers
        ]
        return NetworkSpec(self.input_dim, layers)

    def copy(self) -> "NetworkSpec":
        return self.with_params([{k: v.copy() for k, v in p.items()} for p in self.params()])


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"expected input of width {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("input contains non-finite entries")
    return x, single


def forward(net: NetworkSpec, x) -> np.ndarray:
    """Apply the layers in order.  Accepts one vector or a batch of rows."""
    h, single = _as_batch(x, net.input_dim)
    for layer in net.layers:
        h, _ = layer.forward(h)
    return h[0] if single else h


def forward_with_cache(net: NetworkSpec, x):
    h, _ = _as_batch(x, net.input_dim)
    caches = []
    for layer in net.layers:
        h, c = layer.forward(h)
        caches.append(c)
    return h, caches


def backward(net: NetworkSpec, x, upstream, return_input_grad=False):
    """Reverse-mode gradients of ``sum(upstream * forward(net, x))``.

    Returns one dict per layer with arrays shaped like the layer's
    parameters, summed over the batch.
    """
    out, caches = forward_with_cache(net, x)
    g = np.asarray(upstream, dtype=np.float64).reshape(out.shape)
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        g, grads[i] = net.layers[i].backward(caches[i], g)
    if return_input_grad:
        return grads, g
    return grads


def forward_block(layer: DilationErosionLayer, lin: LinearLayer, x) -> np.ndarray:
    """Morphological block: dilation-erosion layer then linear combination."""
    return forward(NetworkSpec(layer.input_dim, [layer, lin]), x)


def init_dilation_erosion(rng, d_in, n_dilation, n_erosion, with_bias=False, beta=None, low=-0.5, high=0.5):
    cols = d_in + int(with_bias)
    return DilationErosionLayer(
        rng.uniform(low, high, size=(n_dilation, cols)),
        rng.uniform(low, high, size=(n_erosion, cols)),
        with_bias=with_bias,
        beta=beta,
    )


def init_linear(rng, d_in, d_out, with_bias=False):
    bound = 1.0 / math.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_out, d_in))
    return LinearLayer(w, np.zeros(d_out) if with_bias else None)
