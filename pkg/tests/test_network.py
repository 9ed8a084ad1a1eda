"""Layers, stacked forward/backward, losses, training and model JSON."""

import math

import numpy as np
import pytest

from morphnet import serialize
from morphnet.errors import ConfigError, DimensionError, InputError
from morphnet.losses import grad_bce, grad_dssim, grad_mse, loss_bce, loss_dssim, loss_mse, ssim_patches
from morphnet.network import (
    DilationErosionLayer,
    LinearLayer,
    NetworkSpec,
    Sigmoid,
    backward,
    forward,
    forward_block,
    init_dilation_erosion,
    init_linear,
)
from morphnet.training import TrainConfig, accuracy, train


def _random_net(rng, beta=5.0, bias=True):
    d = int(rng.integers(1, 5))
    h = int(rng.integers(1, 4))
    n, m = int(rng.integers(0, 3)), int(rng.integers(1, 3))
    layers = [
        init_dilation_erosion(rng, d, n, m, with_bias=bias, beta=beta, low=-1, high=1),
        init_linear(rng, n + m, h, with_bias=bias),
        init_dilation_erosion(rng, h, 2, 1, with_bias=bias, beta=beta, low=-1, high=1),
        init_linear(rng, 3, 1, with_bias=bias),
        Sigmoid(),
    ]
    return NetworkSpec(d, layers)


def _numeric_grads(net, x, upstream, h=1e-6):
    out = []
    for i, p in enumerate(net.params()):
        g = {}
        for key, arr in p.items():
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                vals = []
                for sign in (1, -1):
                    params = [{k: v.copy() for k, v in q.items()} for q in net.params()]
                    params[i][key][idx] += sign * h
                    vals.append(np.sum(upstream * forward(net.with_params(params), x)))
                num[idx] = (vals[0] - vals[1]) / (2 * h)
            g[key] = num
        out.append(g)
    return out


def _ssim_loop(a, b, p):
    """Direct transcription of patch SSIM with population statistics."""
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(a.shape[0] - p + 1):
        for j in range(a.shape[1] - p + 1):
            x = a[i : i + p, j : j + p].ravel()
            y = b[i : i + p, j : j + p].ravel()
            mx, my = x.mean(), y.mean()
            vx = ((x - mx) ** 2).mean()
            vy = ((y - my) ** 2).mean()
            cxy = ((x - mx) * (y - my)).mean()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return np.array(vals)


class TestForward:
    def test_block_examples(self):
        layer = DilationErosionLayer([[0.0, 0.0]], np.zeros((0, 2)))
        np.testing.assert_array_equal(forward_block(layer, LinearLayer([[1.0]]), [3.0, -1.0]), [3.0])
        layer = DilationErosionLayer([[0.0, 0.0]], [[0.0, 0.0]])
        np.testing.assert_array_equal(forward_block(layer, LinearLayer([[1.0, 1.0]]), [1.0, 2.0]), [3.0])

    def test_zero_params_zero_output(self):
        layer = DilationErosionLayer(np.zeros((2, 3)), np.zeros((2, 3)))
        out = forward_block(layer, LinearLayer(np.zeros((2, 4))), [5.0, -2.0, 1.0])
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_identity_linear(self):
        x = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(forward(NetworkSpec(3, [LinearLayer(np.eye(3))]), x), x)

    def test_sigmoid_head(self):
        net = NetworkSpec(1, [LinearLayer([[1.0]]), Sigmoid()])
        y = forward(net, [[3.0], [800.0], [-800.0]]).ravel()
        assert 0.5 < y[0] < 1
        assert y[1] == 1.0 and y[2] == 0.0

    def test_bias_column(self):
        layer = DilationErosionLayer([[0.0, 0.0, 2.5]], [[0.0, 0.0, 2.0]], with_bias=True)
        out, _ = layer.forward(np.array([[1.0, 2.0]]))
        # the bias slot joins the max/min as the constant 0 + s
        np.testing.assert_array_equal(out, [[2.5, -2.0]])

    def test_dimension_errors(self):
        with pytest.raises(DimensionError):
            NetworkSpec(2, [DilationErosionLayer(np.zeros((1, 3)), np.zeros((0, 3)))])
        with pytest.raises(DimensionError):
            NetworkSpec(2, [])
        net = NetworkSpec(2, [LinearLayer(np.eye(2))])
        with pytest.raises(DimensionError):
            forward(net, [1.0, 2.0, 3.0])
        with pytest.raises(InputError):
            forward(net, [1.0, np.nan])

    def test_layer_validation(self):
        with pytest.raises(DimensionError):
            DilationErosionLayer(np.zeros((0, 2)), np.zeros((0, 2)))
        with pytest.raises(InputError):
            DilationErosionLayer([[np.inf, 0.0]], np.zeros((0, 2)))
        with pytest.raises(InputError):
            DilationErosionLayer([[0.0]], np.zeros((0, 1)), beta=-2.0)

    def test_soft_close_to_hard(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = int(rng.integers(2, 513))
            layer = init_dilation_erosion(rng, d, 3, 3, beta=200.0, low=-5, high=5)
            x = rng.uniform(-5, 5, size=(4, d))
            soft, _ = layer.forward(x)
            hard, _ = NetworkSpec(d, [layer]).hardened().layers[0].forward(x)
            assert np.max(np.abs(soft - hard)) <= math.log(d) / 200.0 + 1e-12
            assert np.max(np.abs(soft - hard)) <= 0.05

    def test_arch_tag(self):
        rng = np.random.default_rng(1)
        net = NetworkSpec(
            2,
            [
                init_dilation_erosion(rng, 2, 1, 1),
                init_dilation_erosion(rng, 2, 1, 0),
                init_linear(rng, 1, 1),
            ],
        )
        assert net.arch_tag() == "D1E1->D1E0->L"


class TestBackward:
    def test_soft_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            net = _random_net(rng)
            x = rng.uniform(-2, 2, size=(3, net.input_dim))
            up = rng.normal(size=(3, 1))
            got = backward(net, x, up)
            want = _numeric_grads(net, x, up)
            for g, w in zip(got, want):
                for key in w:
                    np.testing.assert_allclose(g[key], w[key], rtol=1e-5, atol=1e-8)

    def test_input_gradient(self):
        rng = np.random.default_rng(3)
        net = _random_net(rng)
        x = rng.uniform(-2, 2, size=(1, net.input_dim))
        _, dx = backward(net, x, np.ones((1, 1)), return_input_grad=True)
        num = np.zeros_like(x)
        for k in range(x.shape[1]):
            e = np.zeros_like(x)
            e[0, k] = 1e-6
            num[0, k] = (forward(net, x + e) - forward(net, x - e)).item() / 2e-6
        np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-9)

    def test_shapes_match_params(self):
        rng = np.random.default_rng(4)
        net = _random_net(rng)
        grads = backward(net, rng.normal(size=(5, net.input_dim)), np.ones((5, 1)))
        for g, p in zip(grads, net.params()):
            assert g.keys() == p.keys()
            for key in p:
                assert g[key].shape == p[key].shape

    def test_zero_upstream(self):
        rng = np.random.default_rng(5)
        net = _random_net(rng)
        grads = backward(net, rng.normal(size=(4, net.input_dim)), np.zeros((4, 1)))
        for g in grads:
            for v in g.values():
                assert not np.any(v)

    def test_hard_sparsity(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            layer = init_dilation_erosion(rng, 4, 3, 2, with_bias=True)
            net = NetworkSpec(4, [layer, init_linear(rng, 5, 1)])
            x = rng.normal(size=(1, 4))
            grads = backward(net, x, np.ones((1, 1)))[0]
            assert np.all(np.count_nonzero(grads["s_plus"], axis=1) == 1)
            assert np.all(np.count_nonzero(grads["s_minus"], axis=1) == 1)


class TestLosses:
    def test_values(self):
        y = np.array([0.2, 0.7])
        assert loss_mse(y, y) == 0
        assert loss_mse([0.0], [2.0]) == 4
        assert loss_bce([0.5], [1.0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = rng.uniform(0, 1, size=6)
            t = rng.integers(0, 2, size=6).astype(float)
            assert loss_mse(p, t) >= 0
            assert loss_bce(p, t) >= 0
        # zero only at the clamped target
        assert loss_bce([1e-12, 1 - 1e-12], [0.0, 1.0]) < 1e-6

    def test_gradients(self):
        rng = np.random.default_rng(8)
        p = rng.uniform(0.1, 0.9, size=5)
        t = rng.uniform(0, 1, size=5)
        for f, g in ((loss_mse, grad_mse), (loss_bce, grad_bce)):
            num = np.array([(f(p + e, t) - f(p - e, t)) / 2e-6 for e in np.eye(5) * 1e-6])
            np.testing.assert_allclose(g(p, t), num, rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss_mse([1.0, 2.0], [1.0])


class TestDSSIM:
    def test_identical_zero(self):
        img = np.random.default_rng(9).uniform(size=(12, 12))
        assert loss_dssim(img, img) == 0.0

    def test_constant_images(self):
        v = loss_dssim(np.full((8, 8), 0.2), np.full((8, 8), 0.9))
        assert 0 < v <= 1

    def test_loop_oracle(self):
        rng = np.random.default_rng(10)
        a, b = rng.uniform(size=(13, 11)), rng.uniform(size=(13, 11))
        np.testing.assert_allclose(ssim_patches(a, b, 5), _ssim_loop(a, b, 5), rtol=1e-12)

    def test_reference_implementation(self):
        metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(11)
        a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        # one 7x7 window type comparison over the full image
        ref = metrics.structural_similarity(
            a, b, win_size=7, data_range=1.0, gaussian_weights=False, use_sample_covariance=False
        )
        # skimage averages over windows whose centres lie at least 3 px inside
        ours = ssim_patches(a, b, 7).mean()
        assert ours == pytest.approx(ref, abs=1e-6)
        a, b = rng.uniform(size=(20, 16)), rng.uniform(size=(20, 16))
        ref = metrics.structural_similarity(
            a, b, win_size=5, data_range=1.0, gaussian_weights=False, use_sample_covariance=False
        )
        assert ssim_patches(a, b, 5).mean() == pytest.approx(ref, abs=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(12)
        a, b = rng.uniform(size=(9, 10)), rng.uniform(size=(9, 10))
        for stride in (1, 2):
            g = grad_dssim(a, b, 4, stride)
            num = np.zeros_like(b)
            for idx in np.ndindex(b.shape):
                e = np.zeros_like(b)
                e[idx] = 1e-6
                num[idx] = (loss_dssim(a, b + e, 4, stride) - loss_dssim(a, b - e, 4, stride)) / 2e-6
            np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-9)

    def test_patch_too_big(self):
        with pytest.raises(DimensionError):
            loss_dssim(np.zeros((4, 4)), np.zeros((4, 4)), patch=5)


class TestTraining:
    def _data(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(-1, 1, size=(64, 2))
        return x, np.maximum(x[:, 0], x[:, 1]) + 0.5

    def test_deterministic(self):
        x, y = self._data()
        rng = np.random.default_rng(0)
        net = NetworkSpec(2, [init_dilation_erosion(rng, 2, 2, 2, True, 10.0), init_linear(rng, 4, 1, True)])
        cfg = TrainConfig(epochs=5, batch_size=16, lr=0.01, seed=3)
        a, ta = train(net, x, y, cfg)
        b, tb = train(net, x, y, cfg)
        assert ta == tb
        for pa, pb in zip(a.params(), b.params()):
            for k in pa:
                np.testing.assert_array_equal(pa[k], pb[k])

    def test_exact_fit_stays(self):
        x, y = self._data()
        net = NetworkSpec(
            2,
            [DilationErosionLayer([[0.0, 0.0]], np.zeros((0, 2))), LinearLayer([[1.0]], [0.5])],
        )
        _, trace = train(net, x, y, TrainConfig(epochs=3, batch_size=8))
        assert max(trace) == 0.0

    def test_loss_decreases(self):
        x, y = self._data()
        rng = np.random.default_rng(1)
        net = NetworkSpec(2, [init_dilation_erosion(rng, 2, 2, 2, True, 10.0), init_linear(rng, 4, 1, True)])
        _, trace = train(net, x, y, TrainConfig(epochs=60, batch_size=16, lr=0.02, optimizer="adam"))
        assert trace[-1] < 0.2 * trace[0]
        _, trace = train(net, x, y, TrainConfig(epochs=60, batch_size=16, lr=0.05, optimizer="sgd"))
        assert trace[-1] < trace[0]

    def test_reinitialise(self):
        x, y = self._data()
        rng = np.random.default_rng(2)
        net = NetworkSpec(2, [init_dilation_erosion(rng, 2, 1, 1), init_linear(rng, 2, 1)])
        z, _ = train(net, x, y, TrainConfig(epochs=1, lr=1e-12, init="zeros", batch_size=64))
        for p in z.params():
            for v in p.values():
                assert np.all(np.abs(v) < 1e-9)

    def test_invalid_config(self):
        x, y = self._data()
        net = NetworkSpec(2, [LinearLayer([[1.0, 1.0]])])
        for cfg in (
            TrainConfig(lr=0.0),
            TrainConfig(epochs=0),
            TrainConfig(batch_size=0),
            TrainConfig(batch_size=65),
            TrainConfig(loss="hinge"),
            TrainConfig(optimizer="rmsprop"),
        ):
            with pytest.raises(ConfigError):
                train(net, x, y, cfg)

    def test_accuracy(self):
        net = NetworkSpec(1, [LinearLayer([[1.0]]), Sigmoid()])
        assert accuracy(net, [[1.0], [-1.0], [2.0]], [1, 0, 0]) == pytest.approx(2 / 3)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(14)
        for beta in (None, 7.3):
            net = _random_net(rng, beta=beta)
            path = tmp_path / "m.json"
            serialize.save(net, path)
            back = serialize.load(path)
            assert back.arch_tag() == net.arch_tag()
            x = rng.normal(size=(50, net.input_dim))
            np.testing.assert_array_equal(forward(back, x), forward(net, x))
            for pa, pb in zip(net.params(), back.params()):
                for k in pa:
                    np.testing.assert_array_equal(pa[k], pb[k])

    def test_pure_layers(self):
        net = NetworkSpec(2, [DilationErosionLayer(np.zeros((0, 2)), [[1.0, 2.0]])])
        back = serialize.loads(serialize.dumps(net))
        assert back.layers[0].n_dilation == 0 and back.layers[0].n_erosion == 1

    def test_malformed(self):
        for text in ("[", "[]", '{"input_dim": 2}', '{"input_dim": 2, "layers": [{"kind": "conv"}]}'):
            with pytest.raises(InputError):
                serialize.loads(text)
