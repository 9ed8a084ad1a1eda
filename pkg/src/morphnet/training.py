"""Mini-batch gradient training for :class:`~morphnet.network.NetworkSpec`."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import losses
from .errors import ConfigError, DimensionError
from .network import DilationErosionLayer, NetworkSpec, backward, forward

log = logging.getLogger(__name__)

ANNEAL_EVERY = 50
ANNEAL_FACTOR = 1.5
ANNEAL_CAP = 200.0


@dataclass
class TrainConfig:
    loss: str = "mse"
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    # None keeps the network's current parameters; "zeros" or
    # ("uniform", low, high) re-initialise every parameter.
    init: object = None
    beta_anneal: bool = False
    # dssim only: each output row is reshaped to this image shape.
    image_shape: Optional[tuple] = None
    patch: int = 8
    stride: int = 1

    def validate(self, n_samples: int):
        if self.loss not in ("mse", "bce", "dssim"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 1 <= self.batch_size <= n_samples:
            raise ConfigError(f"batch_size must lie in [1, {n_samples}]")
        if self.loss == "dssim" and self.image_shape is None:
            raise ConfigError("dssim loss needs image_shape")


def _loss_and_grad(cfg: TrainConfig, pred, target):
    if cfg.loss == "mse":
        return losses.loss_mse(pred, target), losses.grad_mse(pred, target)
    if cfg.loss == "bce":
        return losses.loss_bce(pred, target), losses.grad_bce(pred, target)
    shape = (pred.shape[0],) + tuple(cfg.image_shape)
    p = pred.reshape(shape)
    t = target.reshape(shape)
    total, grad = 0.0, np.empty_like(p)
    for i in range(p.shape[0]):
        total += losses.loss_dssim(t[i], p[i], cfg.patch, cfg.stride)
        grad[i] = losses.grad_dssim(t[i], p[i], cfg.patch, cfg.stride)
    n = p.shape[0]
    return total / n, grad.reshape(pred.shape) / n


def evaluate_loss(net: NetworkSpec, x, y, cfg: TrainConfig) -> float:
    pred = forward(net, x)
    return _loss_and_grad(cfg, pred, np.asarray(y, dtype=np.float64).reshape(pred.shape))[0]


def initialise(net: NetworkSpec, init, rng) -> NetworkSpec:
    """Fresh parameters of the same shapes as ``net``."""
    params = []
    for p in net.params():
        if init == "zeros":
            params.append({k: np.zeros_like(v) for k, v in p.items()})
        elif isinstance(init, (tuple, list)) and init[0] == "uniform":
            lo, hi = float(init[1]), float(init[2])
            params.append({k: rng.uniform(lo, hi, size=v.shape) for k, v in p.items()})
        else:
            raise ConfigError(f"unknown init {init!r}")
    return net.with_params(params)


class _Adam:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            new = {}
            for k in p:
                m[k] = c.beta1 * m[k] + (1 - c.beta1) * g[k]
                v[k] = c.beta2 * v[k] + (1 - c.beta2) * g[k] ** 2
                new[k] = p[k] - c.lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + c.eps)
            out.append(new)
        return out


class _SGD:
    def __init__(self, cfg, params):
        self.lr = cfg.lr

    def step(self, params, grads):
        return [{k: p[k] - self.lr * g[k] for k in p} for p, g in zip(params, grads)]


def _anneal(net: NetworkSpec) -> NetworkSpec:
    layers = []
    for layer in net.layers:
        if isinstance(layer, DilationErosionLayer) and not layer.hard:
            layer = replace(layer, beta=min(layer.beta * ANNEAL_FACTOR, ANNEAL_CAP))
        layers.append(layer)
    return NetworkSpec(net.input_dim, layers)


def train(net: NetworkSpec, x, y, cfg: TrainConfig):
    """Train a copy of ``net`` and return it with the per-epoch loss trace.

    The trace holds the full-dataset loss after each epoch.  Runs are
    bit-reproducible for a fixed ``cfg.seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("dataset must be a non-empty (N, d) array")
    if y.shape[0] != x.shape[0]:
        raise DimensionError("features and targets differ in length")
    y = y.reshape(x.shape[0], -1)
    cfg.validate(x.shape[0])
    if y.shape[1] != net.output_dim:
        raise DimensionError(f"targets have width {y.shape[1]}, network emits {net.output_dim}")

    rng = np.random.default_rng(cfg.seed)
    net = net.copy() if cfg.init is None else initialise(net, cfg.init, rng)
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(cfg, net.params())
    n = x.shape[0]
    n_batches = math.ceil(n / cfg.batch_size)
    trace = []
    for epoch in range(cfg.epochs):
        if cfg.beta_anneal and epoch > 0 and epoch % ANNEAL_EVERY == 0:
            net = _anneal(net)
        order = rng.permutation(n)
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            pred = forward(net, x[idx])
            _, g = _loss_and_grad(cfg, pred, y[idx])
            grads = backward(net, x[idx], g)
            net = net.with_params(opt.step(net.params(), grads))
        trace.append(evaluate_loss(net, x, y, cfg))
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.6g", epoch, trace[-1])
    return net, trace


def accuracy(net: NetworkSpec, x, labels, threshold=0.5) -> float:
    """Fraction of rows whose thresholded scalar output equals the label."""
    pred = forward(net, x).reshape(-1) >= threshold
    return float(np.mean(pred == (np.asarray(labels).reshape(-1) >= 0.5)))


def threshold(values, level=0.5) -> np.ndarray:
    return (np.asarray(values) >= level).astype(np.float64)

