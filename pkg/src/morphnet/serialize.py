"""Model JSON: one document per network, exact float round-trip."""

from __future__ import annotations

import json

import numpy as np

from .errors import InputError, MorphNetError
from .fileio import atomic_write_text
from .network import DilationErosionLayer, LinearLayer, NetworkSpec, Sigmoid


def _matrix(raw, rows, cols, name):
    a = np.asarray(raw, dtype=np.float64)
    if a.size == 0:
        a = a.reshape(0, cols)
    if a.shape != (rows, cols):
        raise InputError(f"{name}: expected shape {(rows, cols)}, got {a.shape}")
    return a


def layer_to_dict(layer) -> dict:
    if isinstance(layer, DilationErosionLayer):
        return {
            "kind": "dilation_erosion",
            "n_dilation": layer.n_dilation,
            "n_erosion": layer.n_erosion,
            "with_bias": layer.with_bias,
            "mode": "hard" if layer.hard else {"soft": float(layer.beta)},
            "s_plus": layer.s_plus.tolist(),
            "s_minus": layer.s_minus.tolist(),
        }
    if isinstance(layer, LinearLayer):
        return {
            "kind": "linear",
            "w": layer.w.tolist(),
            "b": None if layer.b is None else layer.b.tolist(),
        }
    if isinstance(layer, Sigmoid):
        return {"kind": "sigmoid"}
    raise InputError(f"cannot serialise {type(layer).__name__}")


def to_dict(net: NetworkSpec) -> dict:
    return {"input_dim": net.input_dim, "layers": [layer_to_dict(layer) for layer in net.layers]}


def _mode_beta(mode):
    if mode == "hard" or mode == ["hard"] or (isinstance(mode, dict) and "hard" in mode):
        return None
    if isinstance(mode, dict) and "soft" in mode:
        return float(mode["soft"])
    raise InputError(f"unknown layer mode {mode!r}")


def from_dict(doc: dict) -> NetworkSpec:
    try:
        width = int(doc["input_dim"])
        layers = []
        for i, raw in enumerate(doc["layers"]):
            kind = raw["kind"]
            if kind == "dilation_erosion":
                cols = width + int(bool(raw["with_bias"]))
                n, m = int(raw["n_dilation"]), int(raw["n_erosion"])
                layer = DilationErosionLayer(
                    _matrix(raw["s_plus"], n, cols, f"layer {i} s_plus"),
                    _matrix(raw["s_minus"], m, cols, f"layer {i} s_minus"),
                    with_bias=bool(raw["with_bias"]),
                    beta=_mode_beta(raw.get("mode", "hard")),
                )
            elif kind == "linear":
                w = np.atleast_2d(np.asarray(raw["w"], dtype=np.float64))
                layer = LinearLayer(w, raw.get("b"))
            elif kind == "sigmoid":
                layer = Sigmoid()
            else:
                raise InputError(f"layer {i}: unknown kind {kind!r}")
            layers.append(layer)
            width = layer.output_dim if layer.output_dim is not None else width
        return NetworkSpec(int(doc["input_dim"]), layers)
    except MorphNetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model JSON: {exc}") from None


def dumps(net: NetworkSpec) -> str:
    # json writes floats with repr, which round-trips every finite double
    return json.dumps(to_dict(net), indent=1, allow_nan=False)


def loads(text: str) -> NetworkSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid model JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("model JSON must be an object")
    return from_dict(doc)


def save(net: NetworkSpec, path):
    atomic_write_text(path, dumps(net))


def load(path) -> NetworkSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read model {path}: {exc}") from None
