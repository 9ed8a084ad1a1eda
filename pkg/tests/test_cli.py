"""End-to-end runs of the ``morphnet`` command line."""

import json

import numpy as np
import pytest

from morphnet import serialize
from morphnet.cli import main, parse_arch
from morphnet.constructor import GeneralHinge, dump_hinges, hinge_sum
from morphnet.datasets import Dataset
from morphnet.errors import InputError
from morphnet.network import DilationErosionLayer, NetworkSpec, forward
from morphnet.pgm import read_pgm, write_pgm
from morphnet.training import TrainConfig, train


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _value(text, key):
    for line in text.splitlines():
        if line.startswith(key + " "):
            return float(line.split()[1])
    raise AssertionError(f"{key} not in output:\n{text}")


class TestArch:
    def test_parse(self):
        rng = np.random.default_rng(0)
        net = parse_arch("de:2+bias,linear:1+bias,sigmoid", 2, rng)
        assert net.arch_tag() == "D1E1->L->S"
        assert net.layers[0].with_bias and net.layers[0].beta == 10.0
        assert net.layers[1].b is not None

    def test_counts_and_modes(self):
        rng = np.random.default_rng(0)
        net = parse_arch("de:5@hard, d:3@2.5, e:2, de:1/3", 4, rng)
        assert net.arch_tag() == "D3E2->D3E0->D0E2->D1E3"
        assert net.layers[0].hard and net.layers[1].beta == 2.5

    def test_errors(self):
        rng = np.random.default_rng(0)
        for text in ("", "conv:3", "d:2/1", "de:2@fast"):
            with pytest.raises(InputError):
                parse_arch(text, 2, rng)


class TestVerbs:
    def test_circles_train_eval(self, tmp_path, capsys):
        data, model, trace = tmp_path / "c.csv", tmp_path / "m.json", tmp_path / "t.csv"
        assert _run(capsys, "gen-circles", "--out", data, "--seed", 0)[0] == 0
        code, out, _ = _run(
            capsys, "train", "--arch", "de:2+bias,linear:1+bias,sigmoid", "--data", data, "--out", model, "--trace", trace, "--seed", 0
        )
        assert code == 0
        assert "train accuracy" in out
        code, out, _ = _run(capsys, "eval", "--model", model, "--data", data)
        assert code == 0 and _value(out, "accuracy") >= 0.95
        rows = trace.read_text().splitlines()
        assert rows[0] == "epoch,loss" and len(rows) == 601

    def test_deterministic_and_round_trip(self, tmp_path, capsys):
        data = tmp_path / "c.csv"
        _run(capsys, "gen-circles", "--out", data, "--n-per-class", 40, "--seed", 2)
        for name in ("a.json", "b.json"):
            _run(capsys, "train", "--arch", "de:4+bias,linear:1,sigmoid", "--data", data, "--out", tmp_path / name, "--epochs", 20, "--seed", 9)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        # saved model reproduces the trained network's predictions exactly
        ds = Dataset.load(data)
        net = parse_arch("de:4+bias,linear:1,sigmoid", 2, np.random.default_rng(9))
        net, _ = train(net, ds.x, ds.y, TrainConfig(loss="bce", lr=0.01, epochs=20, batch_size=64, seed=9))
        loaded = serialize.load(tmp_path / "a.json")
        np.testing.assert_array_equal(forward(loaded, ds.x), forward(net, ds.x))

    def test_hinge_grid_and_harden(self, tmp_path, capsys):
        data = tmp_path / "g.csv"
        assert _run(capsys, "gen-hinge-grid", "--out", data, "--resolution", 11)[0] == 0
        code, out, _ = _run(capsys, "train", "--arch", "de:4+bias,linear:1+bias", "--data", data, "--out", tmp_path / "m.json", "--epochs", 5, "--harden")
        assert code == 0 and "final mse" in out
        assert serialize.load(tmp_path / "m.json").layers[0].hard

    def test_decision_grid(self, tmp_path, capsys):
        data, model, grid = tmp_path / "c.csv", tmp_path / "m.json", tmp_path / "g.csv"
        _run(capsys, "gen-circles", "--out", data, "--n-per-class", 50)
        _run(capsys, "train", "--arch", "de:2+bias,linear:1+bias,sigmoid", "--data", data, "--out", model, "--epochs", 50)
        code, out, _ = _run(capsys, "decision-grid", "--model", model, "--out", grid, "--resolution", 32)
        assert code == 0
        lines = grid.read_text().splitlines()
        assert lines[0] == "x1,x2,signature_id,value" and len(lines) == 32 * 32 + 1
        assert _value(out, "regions") <= 9

    def test_simplify(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        net = NetworkSpec(
            2,
            [
                DilationErosionLayer(rng.integers(-8, 8, (2, 2)) / 4, np.zeros((0, 2))),
                DilationErosionLayer(rng.integers(-8, 8, (2, 2)) / 4, np.zeros((0, 2))),
            ],
        )
        serialize.save(net, tmp_path / "dd.json")
        code, out, _ = _run(capsys, "simplify", "--model", tmp_path / "dd.json", "--out", tmp_path / "s.json")
        assert code == 0
        assert "FUSE dilation layers [0..1] -> 1" in out
        small = serialize.load(tmp_path / "s.json")
        assert len(small.layers) == 1
        x = rng.integers(-40, 40, (500, 2)) / 8
        np.testing.assert_array_equal(forward(small, x), forward(net, x))

    def test_construct_then_eval(self, tmp_path, capsys):
        hinges = [
            GeneralHinge(1, [[1.0, 1.0], [0.0, 0.0]], [0.0, 0.0]),
            GeneralHinge(-1, [[1.0, -2.0], [-1.0, 0.0], [0.0, 1.0]], [1.0, 0.5, -1.0]),
        ]
        (tmp_path / "h.json").write_text(dump_hinges(hinges))
        code, out, _ = _run(
            capsys, "construct", "--hinges", tmp_path / "h.json", "--box", -5, 5, "--out", tmp_path / "m.json", "--report", tmp_path / "r.json"
        )
        assert code == 0
        assert json.loads((tmp_path / "r.json").read_text())["passed"]
        g = np.stack(np.meshgrid(np.linspace(-5, 5, 30), np.linspace(-5, 5, 30)), -1).reshape(-1, 2)
        Dataset(g, hinge_sum(hinges)(g)).save(tmp_path / "d.csv")
        code, out, _ = _run(capsys, "eval", "--model", tmp_path / "m.json", "--data", tmp_path / "d.csv")
        assert _value(out, "max_abs_err") <= 1e-9

    def test_construct_failure_exit_2(self, tmp_path, capsys):
        (tmp_path / "h.json").write_text(dump_hinges([GeneralHinge(1, [[1.0], [-1.0]], [0.0, 0.0])]))
        code, _, err = _run(capsys, "construct", "--hinges", tmp_path / "h.json", "--box", -1, 1, "--out", tmp_path / "m.json", "--tol", -1)
        assert code == 2 and "verification failed" in err

    def test_filter2d(self, tmp_path, capsys):
        img = np.random.default_rng(4).integers(0, 256, (12, 10)) / 255
        write_pgm(tmp_path / "a.pgm", img)
        for op in ("dilate", "erode", "open", "close"):
            code, _, _ = _run(capsys, "filter2d", "--input", tmp_path / "a.pgm", "--out", tmp_path / f"{op}.pgm", "--op", op)
            assert code == 0
        dil = read_pgm(tmp_path / "dilate.pgm")
        ero = read_pgm(tmp_path / "erode.pgm")
        assert np.all(ero <= img) and np.all(img <= dil)
        code, _, _ = _run(capsys, "filter2d", "--input", tmp_path / "a.pgm", "--out", tmp_path / "b.pgm", "--ascii", "--csv", tmp_path / "b.csv")
        assert (tmp_path / "b.pgm").read_bytes().startswith(b"P2")
        assert (tmp_path / "b.csv").read_text().startswith("channel,row,col,value")

    def test_dehaze_toy(self, tmp_path, capsys):
        code, out, _ = _run(capsys, "dehaze-toy", "--out-dir", tmp_path / "dz", "--size", 16)
        assert code == 0
        assert _value(out, "max_abs_err") <= 1e-12
        assert read_pgm(tmp_path / "dz" / "hazy.pgm").shape == (16, 16)

    def test_segment_toy(self, tmp_path, capsys):
        write_pgm(tmp_path / "a.pgm", np.random.default_rng(5).uniform(size=(10, 14)))
        code, _, _ = _run(capsys, "segment-toy", "--input", tmp_path / "a.pgm", "--out", tmp_path / "s.pgm", "--beta", 5)
        assert code == 0
        assert set(np.unique(read_pgm(tmp_path / "s.pgm"))) <= {0.0, 1.0}


class TestExitCodes:
    def test_input_errors(self, tmp_path, capsys):
        assert _run(capsys, "eval", "--model", tmp_path / "none.json", "--data", tmp_path / "none.csv")[0] == 1
        assert _run(capsys, "bogus-verb")[0] == 1
        assert _run(capsys, "gen-circles", "--out", tmp_path / "c.csv", "--r-inner", 3)[0] == 1
        (tmp_path / "bad.json").write_text("{")
        assert _run(capsys, "simplify", "--model", tmp_path / "bad.json", "--out", tmp_path / "o.json")[0] == 1
        assert not (tmp_path / "o.json").exists()
