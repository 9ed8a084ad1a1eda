"""Minimal PGM (P2 ASCII / P5 binary) grayscale reader and writer.

Pixel values are mapped between ``[0, maxval]`` integers and ``[0, 1]``
floats.  Only 8-bit images (``maxval <= 255``) are written; reading accepts
``maxval`` up to 65535.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import InputError
from .fileio import atomic_write_bytes, atomic_write_text


def _tokens(data: bytes, count: int):
    """First ``count`` header tokens (comments stripped) and the offset after them."""
    out = []
    i = 0
    n = len(data)
    while len(out) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise InputError("truncated PGM header")
        out.append(data[start:i])
    return out, i


def decode(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), end = _tokens(data, 4)
    if magic not in (b"P2", b"P5"):
        raise InputError(f"not a PGM file (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise InputError("non-integer PGM header field") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise InputError("invalid PGM dimensions or maxval")
    if magic == b"P5":
        body = data[end + 1 :]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(body) < need:
            raise InputError("truncated PGM raster")
        pix = np.frombuffer(body[:need], dtype=dtype).astype(np.float64)
    else:
        try:
            pix = np.array(data[end:].split(), dtype=np.float64)
        except ValueError:
            raise InputError("non-integer PGM sample") from None
        if pix.size < w * h:
            raise InputError("truncated PGM raster")
        pix = pix[: w * h]
    if np.any(pix > maxval):
        raise InputError("PGM sample exceeds maxval")
    return pix.reshape(h, w) / maxval


def encode(img, binary=True, maxval=255) -> bytes:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InputError("PGM output must be a non-empty 2-D array")
    if not np.all(np.isfinite(a)):
        raise InputError("image contains non-finite values")
    if not 0 < maxval <= 255:
        raise InputError("only 8-bit PGM output is supported")
    q = np.rint(np.clip(a, 0.0, 1.0) * maxval).astype(np.uint8)
    h, w = q.shape
    if binary:
        return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in q)
    return f"P2\n{w} {h}\n{maxval}\n{rows}\n".encode("ascii")


def read_pgm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            return decode(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def write_pgm(path, img, binary=True):
    atomic_write_bytes(path, encode(img, binary=binary))


def write_map_csv(path, maps):
    """Feature maps ``(C, H, W)`` (or one ``(H, W)`` map) as ``channel,row,col,value`` rows."""
    m = np.asarray(maps, dtype=np.float64)
    if m.ndim == 2:
        m = m[None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "row", "col", "value"])
    for c, r, k in np.ndindex(*m.shape):
        w.writerow([c, r, k, repr(float(m[c, r, k]))])
    atomic_write_text(path, buf.getvalue())
