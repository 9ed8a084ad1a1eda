"""Hinge-function view of a single morphological block.

A hard block with one linear output is rewritten exactly as

    M(x) = sum_i alpha_i * max_k (theta_i * x'_k + rho_ik)

with ``alpha_i`` in {+1, -1} and ``x'`` the (optionally 0-augmented) input.
Dilation neurons yield ``theta >= 0``; erosion neurons yield ``theta <= 0``.
In both cases ``alpha * theta`` equals the neuron's combination weight.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError
from .fileio import worker_count
from .network import DilationErosionLayer, LinearLayer

UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class HingeTerm:
    alpha: int
    theta: float
    rho: np.ndarray

    def __call__(self, xa: np.ndarray) -> np.ndarray:
        return self.alpha * np.max(self.theta * xa + self.rho, axis=-1)


@dataclass
class HingeDecomposition:
    terms: list
    dim: int
    with_bias: bool = False
    # linear-layer offset; a constant, carried outside the hinge terms
    offset: float = 0.0

    def __len__(self):
        return len(self.terms)


def _term(weight, s, kind):
    if weight == 0:
        return HingeTerm(1, 0.0, np.zeros_like(s))
    if kind == "dilation":
        if weight > 0:
            return HingeTerm(1, weight, s * weight)
        return HingeTerm(-1, -weight, -s * weight)
    # erosion: w * min(x - s) = -w * max(s - x)
    if weight > 0:
        return HingeTerm(-1, -weight, s * weight)
    return HingeTerm(1, weight, -s * weight)


def decompose(layer: DilationErosionLayer, lin: LinearLayer) -> HingeDecomposition:
    """Exact hinge decomposition of a hard block with a single output.

    Dilation terms come first, then erosion terms.  Zero weights keep their
    slot as a zero term.  A linear-layer offset is kept as ``offset``.
    """
    if not layer.hard:
        raise InputError("decompose needs a hard-mode layer; harden soft layers first")
    if lin.output_dim != 1:
        raise DimensionError("decompose needs a single-output linear layer")
    if lin.input_dim != layer.output_dim:
        raise DimensionError("linear layer does not match the dilation-erosion layer")
    w = lin.w[0]
    n = layer.n_dilation
    terms = [_term(float(w[i]), layer.s_plus[i], "dilation") for i in range(n)]
    terms += [_term(float(w[n + j]), layer.s_minus[j], "erosion") for j in range(layer.n_erosion)]
    offset = 0.0 if lin.b is None else float(lin.b[0])
    return HingeDecomposition(terms, layer.input_dim, layer.with_bias, offset)


def _augment(dec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dec.dim:
        raise DimensionError(f"expected width {dec.dim}, got {x.shape[1]}")
    if dec.with_bias:
        x = np.concatenate([x, np.zeros((x.shape[0], 1))], axis=1)
    return x, single


def eval_hinge_sum(dec: HingeDecomposition, x):
    """Evaluate the signed hinge sum on one point or a batch of rows."""
    xa, single = _augment(dec, x)
    total = np.zeros(xa.shape[0])
    if dec.offset:
        total = total + dec.offset
    for term in dec.terms:
        total = total + term(xa)
    return float(total[0]) if single else total


@dataclass(frozen=True)
class HyperplaneBounds:
    total: int
    non_axis_parallel: int


def hyperplane_bounds(d: int, l: int, bias: bool) -> HyperplaneBounds:
    """Upper bounds on distinct hyperplanes formed by a block of ``l`` neurons.

    total is ``(d+1)^l - 1`` with bias and ``d^l - 1`` without; the count
    not parallel to any axis is ``d! C(l, d) (d+1)^(l-d)`` (``d^(l-d)``
    without bias), zero when ``l < d``.
    """
    if d < 1 or l < 1:
        raise InputError("need d >= 1 and l >= 1")
    base = d + 1 if bias else d
    total = base**l - 1
    oblique = 0 if l < d else math.factorial(d) * math.comb(l, d) * base ** (l - d)
    if total > UINT64_MAX or oblique > UINT64_MAX:
        raise OverflowError(f"hyperplane count for d={d}, l={l} exceeds 64 bits")
    return HyperplaneBounds(total, oblique)


@dataclass(frozen=True)
class CompactBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise DimensionError("box bounds must be non-empty and of equal length")
        if not all(math.isfinite(v) for v in lo + hi):
            raise InputError("box bounds must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise InputError("box needs lo <= hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, low, high, d) -> "CompactBox":
        return cls((low,) * d, (high,) * d)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def bound(self) -> float:
        """C = largest absolute coordinate reachable in the box."""
        return max(max(abs(a), abs(b)) for a, b in zip(self.lo, self.hi))

    @property
    def degenerate(self) -> bool:
        return any(a == b for a, b in zip(self.lo, self.hi))

    def scale(self, unit: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        return lo + unit * (np.asarray(self.hi) - lo)

    def grid(self, resolution: int) -> np.ndarray:
        axes = [np.linspace(a, b, resolution) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class RegionMap:
    """Result of sampling a block's activation pattern on a 2-D grid.

    ``ids[r, c]`` indexes ``pieces`` and ``signature_ids[r, c]`` indexes
    ``signatures`` for the cell centred at ``(xs[c], ys[r])``.  Each piece
    is ``(slope_1, slope_2, intercept)``.
    """

    xs: np.ndarray
    ys: np.ndarray
    ids: np.ndarray
    signature_ids: np.ndarray
    values: np.ndarray
    signatures: list
    pieces: np.ndarray
    piece_of_signature: list = field(default_factory=list)

    @property
    def region_count(self) -> int:
        return len(self.pieces)

    @property
    def hyperplane_count(self) -> int:
        """Distinct pieces with a non-zero slope, i.e. candidate boundary lines."""
        return int(np.sum(np.any(self.pieces[:, :-1] != 0, axis=1)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "signature_id", "value"])
        for r, y in enumerate(self.ys):
            for c, x in enumerate(self.xs):
                w.writerow([repr(float(x)), repr(float(y)), int(self.signature_ids[r, c]), repr(float(self.values[r, c]))])
        return buf.getvalue()


def _signature_rows(layer, pts):
    xa = layer.augment(pts)
    k_plus = np.argmax(xa[:, None, :] + layer.s_plus[None], axis=2)
    k_minus = np.argmax(layer.s_minus[None] - xa[:, None, :], axis=2)
    return np.concatenate([k_plus, k_minus], axis=1)


def _piece(dec: HingeDecomposition, signature) -> tuple:
    d = dec.dim
    slope = np.zeros(d)
    intercept = dec.offset
    for term, k in zip(dec.terms, signature):
        if k < d:
            slope[k] += term.alpha * term.theta
        intercept += term.alpha * term.rho[k]
    return tuple(slope) + (intercept,)


def enumerate_regions(layer: DilationErosionLayer, lin: LinearLayer, box: CompactBox, resolution=512) -> RegionMap:
    """Sample active-selection signatures at grid cell centres over a 2-D box.

    Signatures whose affine pieces coincide are merged into one region.
    """
    if layer.input_dim != 2 or box.dim != 2:
        raise DimensionError("region enumeration is defined for 2-D inputs only")
    if resolution < 1:
        raise InputError("resolution must be >= 1")
    dec = decompose(layer, lin)
    (x0, y0), (x1, y1) = box.lo, box.hi
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution

    def row(r):
        pts = np.stack([xs, np.full_like(xs, ys[r])], axis=1)
        return _signature_rows(layer, pts), eval_hinge_sum(dec, pts)

    with ThreadPoolExecutor(max_workers=min(worker_count(), 8)) as pool:
        rows = list(pool.map(row, range(resolution)))
    sig_grid = np.stack([r[0] for r in rows])  # (res, res, l)
    values = np.stack([r[1] for r in rows])
    flat = sig_grid.reshape(-1, sig_grid.shape[-1])
    signatures, sig_ids = np.unique(flat, axis=0, return_inverse=True)
    sig_ids = sig_ids.reshape(-1)

    piece_index = {}
    piece_of_sig = []
    for sig in signatures:
        p = tuple(round(v, 12) + 0.0 for v in _piece(dec, sig))
        piece_of_sig.append(piece_index.setdefault(p, len(piece_index)))
    pieces = np.array(list(piece_index), dtype=np.float64).reshape(-1, 3)
    ids = np.asarray(piece_of_sig)[sig_ids].reshape(resolution, resolution)
    sig_grid_ids = sig_ids.reshape(resolution, resolution)
    return RegionMap(xs, ys, ids, sig_grid_ids, values, [tuple(int(k) for k in s) for s in signatures], pieces, piece_of_sig)
