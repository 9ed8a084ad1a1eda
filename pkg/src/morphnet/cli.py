"""``morphnet`` command-line front end.

Exit codes: 0 success, 1 invalid input, 2 failed certification.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import re
import sys

import numpy as np

from . import serialize
from .constructor import build_two_layer, certify, hinge_sum, load_hinges
from .datasets import Dataset, gen_hinge_grid, gen_two_circles
from .errors import InputError, MorphNetError, VerificationError
from .fileio import atomic_write_text
from .hinge import CompactBox, enumerate_regions
from .losses import loss_dssim, loss_mse
from .morph2d import dehaze_reconstruct, dilate2d, erode2d, synthesize_haze, toy_unet
from .network import (
    DilationErosionLayer,
    LinearLayer,
    NetworkSpec,
    Sigmoid,
    forward,
    init_dilation_erosion,
    init_linear,
)
from .pgm import read_pgm, write_map_csv, write_pgm
from .rewrite import simplify
from .training import TrainConfig, accuracy, threshold, train

log = logging.getLogger("morphnet")

DEFAULT_BETA = 10.0

_DE = re.compile(r"^(de|d|e):(\d+)(?:/(\d+))?(\+bias)?(?:@(hard|[0-9.eE+-]+))?$")
_LIN = re.compile(r"^linear:(\d+)(\+bias)?$")


def parse_arch(text: str, input_dim: int, rng) -> NetworkSpec:
    """Build a freshly initialised network from the architecture mini-language.

    ``de:<n>`` gives ceil(n/2) dilation and floor(n/2) erosion neurons,
    ``de:<n>/<m>`` gives explicit counts, ``d:<n>`` and ``e:<n>`` pure layers.
    ``+bias`` adds the bias column, ``@<beta>`` or ``@hard`` picks the mode
    (soft with beta 10 when omitted).
    """
    layers = []
    width = input_dim
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        m = _DE.match(part)
        if m:
            kind, first, second, bias, mode = m.groups()
            count = int(first)
            if kind == "de":
                n, e = (count, int(second)) if second is not None else ((count + 1) // 2, count // 2)
            elif second is not None:
                raise InputError(f"'{part}': n/m counts are only valid for de layers")
            else:
                n, e = (count, 0) if kind == "d" else (0, count)
            if mode == "hard":
                beta = None
            elif mode is None:
                beta = DEFAULT_BETA
            else:
                try:
                    beta = float(mode)
                except ValueError:
                    raise InputError(f"'{part}': bad beta {mode!r}") from None
            layer = init_dilation_erosion(rng, width, n, e, with_bias=bool(bias), beta=beta)
        elif _LIN.match(part):
            k, bias = _LIN.match(part).groups()
            layer = init_linear(rng, width, int(k), with_bias=bool(bias))
        elif part == "sigmoid":
            layer = Sigmoid()
        else:
            raise InputError(f"cannot parse layer spec {part!r}")
        layers.append(layer)
        if not isinstance(layer, Sigmoid):
            width = layer.output_dim
    if not layers:
        raise InputError("empty architecture")
    return NetworkSpec(input_dim, layers)


def _box(values, dim) -> CompactBox:
    if len(values) == 2:
        return CompactBox.cube(values[0], values[1], dim)
    if len(values) == 2 * dim:
        return CompactBox(values[0::2], values[1::2])
    raise InputError(f"--box takes 'lo hi' or {dim} 'lo hi' pairs")


def _trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(trace):
        w.writerow([i + 1, repr(float(v))])
    return buf.getvalue()


def _is_binary(y) -> bool:
    return y.ndim == 1 and bool(np.all((y == 0) | (y == 1)))


# -- verbs --------------------------------------------------------------------


def cmd_gen_circles(args):
    ds = gen_two_circles(args.n_per_class, args.r_inner, args.r_outer, args.noise, args.seed)
    ds.save(args.out)
    print(f"wrote {len(ds.x)} rows to {args.out}")


def cmd_gen_hinge_grid(args):
    ds = gen_hinge_grid(args.low, args.high, args.resolution)
    ds.save(args.out)
    print(f"wrote {len(ds.x)} rows to {args.out}")


def cmd_train(args):
    ds = Dataset.load(args.data)
    rng = np.random.default_rng(args.seed)
    net = parse_arch(args.arch, ds.dim, rng)
    loss = args.loss
    if loss is None:
        loss = "bce" if isinstance(net.layers[-1], Sigmoid) and _is_binary(ds.y) else "mse"
    cfg = TrainConfig(
        loss=loss,
        optimizer=args.optimizer,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=min(args.batch_size, len(ds.x)),
        seed=args.seed,
        beta_anneal=args.beta_anneal,
    )
    net, trace = train(net, ds.x, ds.y, cfg)
    if args.harden:
        net = net.hardened()
    serialize.save(net, args.out)
    if args.trace:
        atomic_write_text(args.trace, _trace_csv(trace))
    print(f"arch {net.arch_tag()}  final {loss} {trace[-1]:.6g}")
    if _is_binary(ds.y) and net.output_dim == 1:
        print(f"train accuracy {accuracy(net, ds.x, ds.y):.4f}")


def cmd_eval(args):
    net = serialize.load(args.model)
    ds = Dataset.load(args.data)
    pred = forward(net, ds.x)
    y = ds.y.reshape(pred.shape)
    print(f"mse {loss_mse(pred, y):.10g}")
    print(f"max_abs_err {float(np.max(np.abs(pred - y))):.6g}")
    if _is_binary(ds.y) and net.output_dim == 1:
        print(f"accuracy {accuracy(net, ds.x, ds.y):.4f}")


def cmd_decision_grid(args):
    net = serialize.load(args.model)
    layers = net.layers
    if (
        net.input_dim != 2
        or len(layers) < 2
        or not isinstance(layers[0], DilationErosionLayer)
        or not isinstance(layers[1], LinearLayer)
        or layers[1].output_dim != 1
    ):
        raise InputError("decision-grid needs a 2-D model starting with a dilation-erosion layer and a 1-output linear layer")
    box = _box(args.box, 2)
    first = NetworkSpec(2, layers[:1]).hardened().layers[0]
    regions = enumerate_regions(first, layers[1], box, args.resolution)
    atomic_write_text(args.out, regions.to_csv())
    print(f"regions {regions.region_count}  signatures {len(regions.signatures)}")


def cmd_simplify(args):
    net = serialize.load(args.model)
    out, lines = simplify(net)
    serialize.save(out, args.out)
    for line in lines:
        print(line)
    print(f"layers {len(net.layers)} -> {len(out.layers)}")


def cmd_construct(args):
    try:
        with open(args.hinges, encoding="utf-8") as fh:
            hinges = load_hinges(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {args.hinges}: {exc}") from None
    if not hinges:
        raise InputError("hinge file is empty")
    box = _box(args.box, hinges[0].dim)
    net = build_two_layer(hinges, box)
    serialize.save(net, args.out)
    report = certify(net, hinge_sum(hinges), box, samples=args.samples, tol=args.tol, seed=args.seed)
    if args.report:
        atomic_write_text(args.report, json.dumps(report.to_dict(), indent=1))
    print(f"max_abs_err {report.max_abs_err:.3e} over {report.samples} samples (tol {report.tol:g})")
    if not report.passed:
        raise VerificationError(f"certification failed at {report.argmax_point.tolist()}")


def _structuring_element(args):
    a, b = args.size
    if a < 1 or b < 1:
        raise InputError("structuring element sides must be >= 1")
    if args.se == "flat":
        return np.zeros((a, b))
    if args.se == "cone":
        ca, cb = (a - 1) // 2, (b - 1) // 2
        ii, jj = np.meshgrid(np.arange(a) - ca, np.arange(b) - cb, indexing="ij")
        return -args.slope * np.maximum(np.abs(ii), np.abs(jj))
    raise InputError(f"unknown structuring element {args.se!r}")


def cmd_filter2d(args):
    img = read_pgm(args.input)
    s = _structuring_element(args)
    ops = {
        "dilate": lambda x: dilate2d(x, s, args.padding, args.beta),
        "erode": lambda x: erode2d(x, s, args.padding, args.beta),
        "open": lambda x: dilate2d(erode2d(x, s, args.padding, args.beta), s, args.padding, args.beta),
        "close": lambda x: erode2d(dilate2d(x, s, args.padding, args.beta), s, args.padding, args.beta),
    }
    out = ops[args.op](img)
    write_pgm(args.out, out, binary=not args.ascii)
    if args.csv:
        write_map_csv(args.csv, out)
    print(f"{args.op} {s.shape[0]}x{s.shape[1]} on {img.shape[0]}x{img.shape[1]} -> {args.out}")


def _smooth_field(rng, shape, low, high):
    # bilinear upsampling of a coarse random grid
    h, w = shape
    coarse = rng.uniform(low, high, size=(4, 4))
    ys = np.linspace(0, 3, h)
    xs = np.linspace(0, 3, w)
    rows = np.array([np.interp(xs, np.arange(4), r) for r in coarse])
    return np.array([np.interp(ys, np.arange(4), c) for c in rows.T]).T


def cmd_dehaze_toy(args):
    rng = np.random.default_rng(args.seed)
    shape = (args.size, args.size)
    clear = rng.uniform(0.0, 1.0, size=shape)
    t = _smooth_field(rng, shape, 0.3, 1.0)
    k = (1.0 - t) * _smooth_field(rng, shape, 0.6, 0.9)
    hazy = synthesize_haze(clear, t, k)
    restored = dehaze_reconstruct(hazy, t, k)
    err = float(np.max(np.abs(restored - clear)))
    dssim = loss_dssim(clear, restored, patch=min(8, args.size))
    print(f"max_abs_err {err:.3e}")
    print(f"dssim {dssim:.3e}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for name, img in (("clear", clear), ("hazy", hazy), ("restored", restored)):
            write_pgm(os.path.join(args.out_dir, f"{name}.pgm"), img)
    if err > args.tol:
        raise VerificationError(f"round-trip error {err:.3e} exceeds {args.tol:g}")


def cmd_segment_toy(args):
    img = read_pgm(args.input)
    h, w = img.shape
    hp, wp = 4 * math.ceil(h / 4), 4 * math.ceil(w / 4)
    padded = np.pad(img, ((0, hp - h), (0, wp - w)), mode="edge")
    prob = toy_unet(padded, np.random.default_rng(args.seed), beta=args.beta)[:h, :w]
    write_pgm(args.out, threshold(prob))
    if args.csv:
        write_map_csv(args.csv, prob)
    print(f"foreground fraction {float(np.mean(prob >= 0.5)):.4f}")


# -- argument parsing ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="morphnet", description="Morphological networks: train, simplify, construct, filter.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-circles", help="two concentric circles dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-per-class", type=int, default=500)
    g.add_argument("--r-inner", type=float, default=1.0)
    g.add_argument("--r-outer", type=float, default=2.0)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_circles)

    g = sub.add_parser("gen-hinge-grid", help="grid labelled with max(x + y, 0)")
    g.add_argument("--out", required=True)
    g.add_argument("--low", type=float, default=-5.0)
    g.add_argument("--high", type=float, default=5.0)
    g.add_argument("--resolution", type=int, default=41)
    g.set_defaults(func=cmd_gen_hinge_grid)

    g = sub.add_parser("train", help="train a network on a CSV dataset")
    g.add_argument("--arch", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", default="model.json")
    g.add_argument("--trace", help="loss-trace CSV path")
    g.add_argument("--loss", choices=["mse", "bce"])
    g.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--epochs", type=int, default=600)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--beta-anneal", action="store_true")
    g.add_argument("--harden", action="store_true", help="save with hard max/min")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="evaluate a model on a dataset")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("decision-grid", help="export the linear-region map of a 2-D block")
    g.add_argument("--model", required=True)
    g.add_argument("--box", type=float, nargs="+", default=[-3.0, 3.0])
    g.add_argument("--resolution", type=int, default=256)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_decision_grid)

    g = sub.add_parser("simplify", help="fuse pure dilation/erosion chains")
    g.add_argument("--model", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_simplify)

    g = sub.add_parser("construct", help="exact network for a signed hinge sum")
    g.add_argument("--hinges", required=True)
    g.add_argument("--box", type=float, nargs="+", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--report", help="certification report JSON path")
    g.add_argument("--samples", type=int, default=10_000)
    g.add_argument("--tol", type=float, default=1e-9)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_construct)

    g = sub.add_parser("filter2d", help="grayscale morphology on a PGM image")
    g.add_argument("--input", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--op", choices=["dilate", "erode", "open", "close"], default="dilate")
    g.add_argument("--se", choices=["flat", "cone"], default="flat")
    g.add_argument("--size", type=int, nargs=2, default=[3, 3])
    g.add_argument("--slope", type=float, default=0.1)
    g.add_argument("--padding", choices=["replicate", "infinite", "zero"], default="replicate")
    g.add_argument("--beta", type=float)
    g.add_argument("--ascii", action="store_true", help="write P2 instead of P5")
    g.add_argument("--csv", help="also write the output map as CSV")
    g.set_defaults(func=cmd_filter2d)

    g = sub.add_parser("dehaze-toy", help="synthetic haze round trip")
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-12)
    g.add_argument("--out-dir")
    g.set_defaults(func=cmd_dehaze_toy)

    g = sub.add_parser("segment-toy", help="random-filter morphological U-Net, thresholded at 0.5")
    g.add_argument("--input", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--beta", type=float)
    g.add_argument("--csv")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_segment_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except VerificationError as exc:
        print(f"morphnet: verification failed: {exc}", file=sys.stderr)
        return 2
    except (MorphNetError, OSError) as exc:
        print(f"morphnet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
