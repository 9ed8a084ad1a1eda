"""Toy datasets and the ``x1,...,xd,y`` CSV format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .fileio import atomic_write_text


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2:
            raise DimensionError("features must be an (N, d) array")
        if self.y.shape[0] != self.x.shape[0]:
            raise DimensionError("features and labels differ in length")

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def header(self) -> list:
        names = [f"x{i + 1}" for i in range(self.dim)]
        if self.y.ndim == 1:
            return names + ["y"]
        return names + [f"y{j + 1}" for j in range(self.y.shape[1])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        y = self.y.reshape(self.x.shape[0], -1)
        for xi, yi in zip(self.x, y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])
        return buf.getvalue()

    def save(self, path):
        atomic_write_text(path, self.to_csv())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InputError(f"{path}: empty file")
        header = rows[0]
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        if not xcols or not ycols:
            raise InputError(f"{path}: header must be x1,...,xd,y")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
        if data.size == 0:
            raise InputError(f"{path}: no data rows")
        if data.shape[1] != len(header):
            raise InputError(f"{path}: inconsistent row width")
        y = data[:, ycols]
        return cls(data[:, xcols], y[:, 0] if len(ycols) == 1 else y)


def gen_two_circles(n_per_class=500, r_inner=1.0, r_outer=2.0, noise_sd=0.1, seed=0) -> Dataset:
    """Two concentric circles centred at the origin; label 0 inner, 1 outer.

    Isotropic Gaussian noise of standard deviation ``noise_sd`` is added to
    each point.
    """
    if not (r_inner > 0 and r_outer > 0 and r_inner < r_outer):
        raise InputError("need 0 < r_inner < r_outer")
    if noise_sd < 0:
        raise InputError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, r in ((0.0, r_inner), (1.0, r_outer)):
        theta = rng.uniform(0.0, 2 * np.pi, size=n_per_class)
        pts = r * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        if noise_sd > 0:
            pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(n_per_class, label))
    return Dataset(np.concatenate(xs), np.concatenate(ys))


def hinge_target(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x[..., 0] + x[..., 1], 0.0)


def gen_hinge_grid(low=-5.0, high=5.0, resolution=41) -> Dataset:
    """Regular grid over ``[low, high]^2`` labelled with ``max(x + y, 0)``."""
    if resolution < 2:
        raise InputError("resolution must be >= 2")
    axis = np.linspace(low, high, resolution)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    x = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return Dataset(x, hinge_target(x))
