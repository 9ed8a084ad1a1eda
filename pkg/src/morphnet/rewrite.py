"""Layer-list rewrites: fusing pure dilation (or erosion) chains.

A hard dilation layer with element matrix ``S`` (one row per neuron) maps
``x`` to ``y_j = max_i (x_i + S[j, i])``.  Two of them compose into a single
layer with ``S = S2 (x) S1`` in max-plus arithmetic, the longest-path
weight from each input to each output.  Erosion layers compose with the same
product because ``erode(x, S) = -dilate(-x, S)``.

Biased layers are handled by carrying the constant-0 input through the
chain as an extra coordinate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError
from .hinge import CompactBox
from .network import DilationErosionLayer, LinearLayer, NetworkSpec, forward
from .tropical import NEG_INF, maxplus_matmul

log = logging.getLogger(__name__)


def _kind(layer) -> Optional[str]:
    if not isinstance(layer, DilationErosionLayer):
        return None
    if layer.n_erosion == 0:
        return "dilation"
    if layer.n_dilation == 0:
        return "erosion"
    return None


def _elements(layer: DilationErosionLayer) -> np.ndarray:
    return layer.s_plus if layer.n_erosion == 0 else layer.s_minus


def _augmented(layer: DilationErosionLayer) -> np.ndarray:
    """(n + 1) x (d + 1) element matrix including the constant-0 channel."""
    s = _elements(layer)
    n = s.shape[0]
    if layer.with_bias:
        body = s
    else:
        body = np.concatenate([s, np.full((n, 1), NEG_INF)], axis=1)
    carry = np.full((1, body.shape[1]), NEG_INF)
    carry[0, -1] = 0.0
    return np.vstack([body, carry])


def fuse_run(layers: list) -> DilationErosionLayer:
    """Fuse consecutive hard layers of one kind into a single layer."""
    kind = _kind(layers[0])
    if any(_kind(layer) != kind for layer in layers) or kind is None:
        raise InputError("can only fuse layers that are all pure dilation or all pure erosion")
    if any(not layer.hard for layer in layers):
        raise InputError("soft-mode layers cannot be fused exactly")
    with_bias = any(layer.with_bias for layer in layers)
    if with_bias:
        u = _augmented(layers[0])
        for layer in layers[1:]:
            u = maxplus_matmul(_augmented(layer), u)
        s = u[:-1]
    else:
        s = _elements(layers[0])
        for layer in layers[1:]:
            s = maxplus_matmul(_elements(layer), s)
    d = s.shape[1]
    empty = np.zeros((0, d))
    if kind == "dilation":
        return DilationErosionLayer(s, empty, with_bias=with_bias)
    return DilationErosionLayer(empty, s, with_bias=with_bias)


def _runs(net: NetworkSpec):
    """Maximal runs ``(kind, start, stop)`` of consecutive pure layers of one kind."""
    runs = []
    i = 0
    layers = net.layers
    while i < len(layers):
        kind = _kind(layers[i])
        j = i + 1
        if kind is not None:
            while j < len(layers) and _kind(layers[j]) == kind:
                j += 1
        runs.append((kind, i, j))
        i = j
    return runs


def _collapse(net: NetworkSpec, kinds, log_lines: list) -> NetworkSpec:
    out = []
    for kind, start, stop in _runs(net):
        run = net.layers[start:stop]
        if kind not in kinds or len(run) < 2:
            out.extend(run)
        elif any(not layer.hard for layer in run):
            log_lines.append(f"SKIP {kind} layers [{start}..{stop - 1}]: soft mode is not fused")
            log.info(log_lines[-1])
            out.extend(run)
        else:
            out.append(fuse_run(run))
            log_lines.append(f"FUSE {kind} layers [{start}..{stop - 1}] -> 1")
    return NetworkSpec(net.input_dim, out)


def collapse_dilation_chain(net: NetworkSpec, log_lines=None) -> NetworkSpec:
    """Replace every run of two or more hard pure-dilation layers by one layer."""
    return _collapse(net, {"dilation"}, [] if log_lines is None else log_lines)


def collapse_erosion_chain(net: NetworkSpec, log_lines=None) -> NetworkSpec:
    return _collapse(net, {"erosion"}, [] if log_lines is None else log_lines)


def simplify(net: NetworkSpec):
    """Fuse all fusable runs; returns ``(net, log_lines)``.

    Layer indices in the log refer to the input network.  Runs never cross
    a mixed layer, a linear layer or a sigmoid.
    """
    log_lines: list = []
    return _collapse(net, {"dilation", "erosion"}, log_lines), log_lines


# -- inequivalence witnesses -------------------------------------------------

SUPPORTED_PAIRS = {
    ("D1E1->D1", "D1E0"),
    ("D1E1->D1->L", "D1E0->L"),
    ("D2E0->D0E2->D1", "D2E0->D1"),
}

DEFAULT_PARAMS = {
    # f1 = max(x + a, y + b), g1 = min(x + c, y + d), out = max(f1 + a1, g1 + b1)
    "D1E1->D1": dict(a=0.0, b=0.0, c=1.0, d=1.0, a1=0.0, b1=2.0),
    "D1E1->D1->L": dict(a=0.0, b=0.0, c=1.0, d=1.0, a1=0.0, b1=2.0, alpha=1.5),
    # two pass-through dilations, two erosions, one dilation: min(x, y) on the box
    "D2E0->D0E2->D1": dict(block=12.0),
}


def _canonical(tag: str) -> str:
    return tag.replace("→", "->").replace(" ", "")


def build_witness_net(arch: str, params: dict) -> NetworkSpec:
    """Instantiate one of the supported architectures from named parameters."""
    arch = _canonical(arch)
    if arch in ("D1E1->D1", "D1E1->D1->L"):
        p = params
        first = DilationErosionLayer([[p["a"], p["b"]]], [[-p["c"], -p["d"]]])
        second = DilationErosionLayer([[p["a1"], p["b1"]]], np.zeros((0, 2)))
        layers = [first, second]
        if arch.endswith("->L"):
            if not p["alpha"] > 0:
                raise InputError("the linear weight alpha must be positive")
            layers.append(LinearLayer([[p["alpha"]]]))
        return NetworkSpec(2, layers)
    if arch == "D2E0->D0E2->D1":
        big = params["block"]
        first = DilationErosionLayer([[0.0, -big], [-big, 0.0]], np.zeros((0, 2)))
        second = DilationErosionLayer(np.zeros((0, 2)), [[0.0, 0.0], [0.0, 0.0]])
        third = DilationErosionLayer([[0.0, -big]], np.zeros((0, 2)))
        return NetworkSpec(2, [first, second, third])
    raise InputError(f"no witness construction for architecture {arch!r}")


@dataclass
class Witness:
    """Two sublevel-set points whose coordinate-wise maximum leaves the set.

    Any function of the single-dilation-layer shape ``max(x + u, y + v)``
    (optionally scaled by a positive weight) has sublevel sets closed under
    coordinate-wise maxima, so such a triple proves it cannot match ``net``.
    """

    net: NetworkSpec
    level: float
    p: np.ndarray
    q: np.ndarray
    mask: np.ndarray = field(repr=False)
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)

    @property
    def join(self) -> np.ndarray:
        return np.maximum(self.p, self.q)

    def verify(self) -> bool:
        vals = forward(self.net, np.stack([self.p, self.q, self.join])).reshape(-1)
        return bool(vals[0] <= self.level and vals[1] <= self.level and vals[2] > self.level)


def _join_violation(mask):
    """First grid cell outside the set reachable as a join of two set cells.

    ``mask[i, j]`` is membership of ``(xs[i], ys[j])``.
    """
    below_in_row = np.logical_or.accumulate(mask, axis=1)  # some (i, j1 <= j) inside
    left_in_col = np.logical_or.accumulate(mask, axis=0)  # some (i2 <= i, j) inside
    bad = ~mask & below_in_row & left_in_col
    if not bad.any():
        return None
    i, j = np.argwhere(bad)[0]
    j1 = int(np.argmax(mask[i, : j + 1]))
    i2 = int(np.argmax(mask[: i + 1, j]))
    return (i, j1), (i2, j)


def inequivalence_witness(
    arch_a: str,
    arch_b: str,
    params: Optional[dict] = None,
    level: float = 0.0,
    trials: int = 16,
    box: Optional[CompactBox] = None,
    grid: int = 256,
) -> Optional[Witness]:
    """Search for a sublevel set of ``arch_a`` that ``arch_b`` cannot produce.

    ``arch_a`` is instantiated with ``params`` (defaults satisfy the strict
    inequalities that make it inequivalent).  The sublevel set at ``level``,
    then at ``trials - 1`` further levels spread over the sampled range, is
    rasterised on a ``grid x grid`` lattice and tested for closure under
    coordinate-wise maxima.  Returns ``None`` when every level is closed.
    """
    pair = (_canonical(arch_a), _canonical(arch_b))
    if pair not in SUPPORTED_PAIRS:
        raise InputError(f"unsupported architecture pair {pair}")
    if grid < 2:
        raise InputError("grid must have at least 2 points per axis")
    box = box or CompactBox((-4.0, -4.0), (4.0, 4.0))
    if box.dim != 2:
        raise InputError("witness search runs on a 2-D box")
    p = dict(DEFAULT_PARAMS[pair[0]])
    p.update(params or {})
    net = build_witness_net(pair[0], p)

    xs = np.linspace(box.lo[0], box.hi[0], grid)
    ys = np.linspace(box.lo[1], box.hi[1], grid)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    values = forward(net, np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(grid, grid)
    levels = [float(level)]
    if trials > 1:
        levels += list(np.quantile(values, np.linspace(0.05, 0.95, trials - 1)))
    for e in levels:
        mask = values <= e
        hit = _join_violation(mask)
        if hit is None:
            continue
        (i1, j1), (i2, j2) = hit
        w = Witness(net, e, np.array([xs[i1], ys[j1]]), np.array([xs[i2], ys[j2]]), mask, xs, ys)
        if w.verify():
            return w
    return None
