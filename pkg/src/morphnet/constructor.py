"""Exact two-layer dilation networks for signed sums of hinge functions.

Over a compact box every affine map is a linear combination of ``d``
dilation neurons that each pass one coordinate through, and a dilation
neuron with ``-3B`` entries outside its block selects the maximum of that
block.  Stacking the two gives an exact representation of
``sum_i alpha_i max_v (w_iv . x + b_iv)`` on the box.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DimensionError, InputError
from .fileio import worker_count
from .hinge import CompactBox
from .network import DilationErosionLayer, LinearLayer, NetworkSpec, forward

log = logging.getLogger(__name__)

B_GRID_RESOLUTION = 101
B_SAMPLES_HIGH_DIM = 4096
B_SAFETY = 1.25


@dataclass(frozen=True)
class GeneralHinge:
    """``alpha * max_v (w_v . x + b_v)`` with ``alpha`` in {+1, -1}."""

    alpha: int
    weights: np.ndarray  # (k + 1, d)
    offsets: np.ndarray  # (k + 1,)

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        b = np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        if self.alpha not in (1, -1):
            raise InputError(f"hinge sign must be +1 or -1, got {self.alpha}")
        if w.shape[0] < 1 or w.shape[0] != b.shape[0]:
            raise DimensionError("a hinge needs at least one plane, one offset per plane")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("hinge coefficients must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offsets", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def order(self) -> int:
        return self.weights.shape[0] - 1

    def planes(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.weights.T + self.offsets

    def unsigned(self, x) -> np.ndarray:
        return self.planes(x).max(axis=1)

    def __call__(self, x) -> np.ndarray:
        return self.alpha * self.unsigned(x)


def hinge_sum(hinges: Sequence[GeneralHinge]) -> Callable:
    def target(x):
        return sum(h(x) for h in hinges)

    return target


def load_hinges(text: str) -> list:
    """Parse ``[{"alpha": 1, "planes": [{"w": [...], "b": r}, ...]}, ...]``."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid hinge JSON: {exc}") from None
    if not isinstance(raw, list):
        raise InputError("hinge JSON must be an array")
    hinges = []
    for item in raw:
        try:
            planes = item["planes"]
            hinges.append(
                GeneralHinge(
                    int(item["alpha"]),
                    [p["w"] for p in planes],
                    [p["b"] for p in planes],
                )
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed hinge entry: {exc}") from None
    return hinges


def dump_hinges(hinges) -> str:
    return json.dumps(
        [
            {
                "alpha": h.alpha,
                "planes": [{"w": w.tolist(), "b": float(b)} for w, b in zip(h.weights, h.offsets)],
            }
            for h in hinges
        ]
    )


def hyperplane_layer(c: float, d: int) -> DilationErosionLayer:
    """``d`` dilation neurons; neuron ``l`` returns ``x_l`` whenever ``|x| <= c``."""
    if not c > 0:
        raise InputError("bound C must be positive")
    if d < 1:
        raise InputError("dimension must be >= 1")
    s = np.full((d, d), -3.0 * c)
    np.fill_diagonal(s, 0.0)
    return DilationErosionLayer(s, np.zeros((0, d)))


def _box_points(box: CompactBox, seed=0) -> np.ndarray:
    if box.dim <= 3:
        return box.grid(B_GRID_RESOLUTION)
    unit = qmc.Halton(d=box.dim, scramble=True, seed=seed).random(B_SAMPLES_HIGH_DIM)
    corners = np.array(np.meshgrid(*[(0.0, 1.0)] * box.dim, indexing="ij")).reshape(box.dim, -1).T
    return box.scale(np.vstack([unit, corners]))


def hinge_bound(hinges, box: CompactBox) -> float:
    """Inflated estimate of ``max_i sup_box |h_i|`` from dense sampling."""
    pts = _box_points(box)
    b = max(float(np.max(np.abs(h.unsigned(pts)))) for h in hinges)
    b *= B_SAFETY
    return b if b > 0 else 1.0


def build_two_layer(hinges: Sequence[GeneralHinge], box: CompactBox) -> NetworkSpec:
    """Dilation -> linear -> dilation -> linear net equal to ``sum alpha_i h_i`` on ``box``."""
    hinges = list(hinges)
    if not hinges:
        raise InputError("need at least one hinge")
    d = box.dim
    if any(h.dim != d for h in hinges):
        raise DimensionError(f"every hinge must act on {d}-dimensional input")
    if box.degenerate:
        log.warning("box has zero volume along at least one axis")
    c = box.bound
    if c == 0:
        c = 1.0
    big_b = hinge_bound(hinges, box)

    first = hyperplane_layer(c, d)
    planes_w = np.vstack([h.weights for h in hinges])
    planes_b = np.concatenate([h.offsets for h in hinges])
    spread = LinearLayer(planes_w, planes_b)

    sizes = [h.order + 1 for h in hinges]
    k = sum(sizes)
    t = np.full((len(hinges), k), -3.0 * big_b)
    start = 0
    for i, size in enumerate(sizes):
        t[i, start : start + size] = 0.0
        start += size
    select = DilationErosionLayer(t, np.zeros((0, k)))
    combine = LinearLayer(np.array([[float(h.alpha) for h in hinges]]), np.zeros(1))
    return NetworkSpec(d, [first, spread, select, combine])


@dataclass
class CertifyReport:
    max_abs_err: float
    argmax_point: np.ndarray
    samples: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_abs_err <= self.tol

    def to_dict(self) -> dict:
        return {
            "max_abs_err": self.max_abs_err,
            "argmax_point": self.argmax_point.tolist(),
            "samples": self.samples,
            "tol": self.tol,
            "passed": self.passed,
        }


def sample_box(box: CompactBox, samples: int, seed=0) -> np.ndarray:
    """Scrambled Halton points in the box (deterministic for a given seed)."""
    if samples < 1:
        raise InputError("sample budget must be >= 1")
    unit = qmc.Halton(d=box.dim, scramble=True, seed=seed).random(samples)
    return box.scale(unit)


def certify(net: NetworkSpec, target: Callable, box: CompactBox, samples=10_000, tol=1e-9, seed=0) -> CertifyReport:
    """Worst-case ``|net(x) - target(x)|`` over low-discrepancy samples of the box."""
    if net.input_dim != box.dim:
        raise DimensionError(f"network input width {net.input_dim} != box dimension {box.dim}")
    pts = sample_box(box, samples, seed)
    chunks = np.array_split(pts, min(worker_count(), 8, len(pts)))

    def err(chunk):
        got = forward(net, chunk).reshape(-1)
        want = np.asarray(target(chunk), dtype=np.float64).reshape(-1)
        return np.abs(got - want)

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        errs = np.concatenate(list(pool.map(err, chunks)))
    i = int(np.argmax(errs))
    return CertifyReport(float(errs[i]), pts[i], samples, tol)


def selector_argmax(net: NetworkSpec, x) -> np.ndarray:
    """Index picked by each neuron of the selecting (third) layer at ``x``."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for layer in net.layers[:2]:
        h, _ = layer.forward(h)
    select = net.layers[2]
    return np.argmax(h[:, None, :] + select.s_plus[None], axis=2)
