import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phenoseq import kernels, lstm_net, training
from phenoseq.lstm_net import (LayerParams, LstmParams, backward, cell_step, forward,
                               init_params, load_params, predict, save_params)

import oracles


@pytest.fixture(params=["compiled", "python"])
def backend(request, monkeypatch):
    """Run a test against each kernel implementation."""
    if request.param == "compiled":
        if kernels.compiled_backend is None:
            pytest.skip("compiled kernels not built")
        mod = kernels.compiled_backend
    else:
        mod = kernels.python_backend
    monkeypatch.setattr(kernels, "layer_forward", mod.layer_forward)
    monkeypatch.setattr(kernels, "layer_backward", mod.layer_backward)
    return request.param


def zero_params(V, hidden, L):
    p = init_params(V, hidden, L, seed=0)
    for t in p.tensors():
        t[:] = 0.0
    return p


class TestInit:
    def test_reference_shapes(self):
        p = init_params(13, [128, 128], 128, seed=0)
        assert p.layers[0].gate("i")[0].shape == (128, 13)
        assert p.layers[1].gate("f")[0].shape == (128, 128)
        assert p.head_W.shape == (128, 128)

    def test_seeded(self):
        a, b = init_params(5, [6, 7], 3, seed=11), init_params(5, [6, 7], 3, seed=11)
        for x, y in zip(a.tensors(), b.tensors()):
            np.testing.assert_array_equal(x, y)
        c = init_params(5, [6, 7], 3, seed=12)
        assert not np.array_equal(a.layers[0].W, c.layers[0].W)

    def test_biases_and_range(self):
        p = init_params(5, [6, 7], 3, seed=1)
        for layer, width in zip(p.layers, (5, 6)):
            H = layer.hidden_size
            assert (layer.b[H:2 * H] == 1.0).all()
            assert (layer.b[:H] == 0).all() and (layer.b[2 * H:] == 0).all()
            r = 1 / np.sqrt(width + H)
            assert np.abs(layer.W).max() <= r and np.abs(layer.U).max() <= r

    def test_chrono(self):
        p = init_params(5, [6], 3, seed=1, chrono_max=100)
        bf = p.layers[0].b[6:12]
        assert ((bf >= 0) & (bf <= np.log(99))).all()
        assert (p.layers[0].b[:6] == 0).all()

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            init_params(0, [4], 2, seed=0)
        with pytest.raises(ValueError):
            init_params(3, [], 2, seed=0)


class TestCell:
    def test_zero(self):
        layer = LayerParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        h, c, _ = cell_step(layer, np.ones(3), np.zeros(2), np.zeros(2))
        assert (h == 0).all() and (c == 0).all()

    def test_perfect_memory(self):
        b = np.zeros(8)
        b[:2] = -800.0  # input gate shut
        b[2:4] = 800.0  # forget gate open
        layer = LayerParams(np.zeros((8, 3)), np.zeros((8, 2)), b)
        _, c, _ = cell_step(layer, np.ones(3), np.zeros(2), np.array([0.3, -2.0]))
        np.testing.assert_array_equal(c, [0.3, -2.0])

    def test_shape_mismatch(self):
        layer = LayerParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        with pytest.raises(ValueError):
            cell_step(layer, np.ones(4), np.zeros(2), np.zeros(2))

    def test_scalar_oracle(self):
        rng = np.random.default_rng(2)
        p = init_params(3, [4], 2, seed=3)
        for t in p.tensors():
            t[:] = rng.normal(0, 0.7, t.shape)
        x = rng.random(3)
        h, c, _ = cell_step(p.layers[0], x, np.zeros(4), np.zeros(4))
        # one-step, one-layer network: the head sees h directly
        expect = oracles.scalar_lstm_forward(p, x[None, :])
        np.testing.assert_allclose(predict(p, x[None, :]), expect, rtol=0, atol=1e-14)


class TestForward:
    def test_matches_scalar_loops(self, backend):
        rng = np.random.default_rng(5)
        p = init_params(3, [4, 5], 3, seed=4)
        for t in p.tensors():
            t[:] = rng.normal(0, 0.8, t.shape)
        x = rng.random((7, 3))
        np.testing.assert_allclose(predict(p, x), oracles.scalar_lstm_forward(p, x),
                                   rtol=0, atol=1e-13)

    def test_matches_cell_step_loop(self, backend):
        rng = np.random.default_rng(6)
        p = init_params(4, [3, 5], 2, seed=6)
        x = rng.random((9, 4))
        scores, trace = forward(p, x)
        seq = x
        for layer, lt in zip(p.layers, trace.layers):
            H = layer.hidden_size
            h, c = np.zeros(H), np.zeros(H)
            out = []
            for row in seq:
                h, c, _ = cell_step(layer, row, h, c)
                out.append(h)
            seq = np.array(out)
            np.testing.assert_allclose(lt.h, seq, rtol=0, atol=1e-14)
            assert lt.h.shape == (9, H)

    def test_zero_params_give_half(self):
        p = zero_params(3, [4, 4], 5)
        np.testing.assert_array_equal(predict(p, np.random.default_rng(0).random((6, 3))),
                                      np.full(5, 0.5))

    def test_single_step(self):
        p = init_params(3, [4], 2, seed=0)
        scores, trace = forward(p, np.ones((1, 3)))
        assert trace.n_steps == 1 and scores.shape == (2,)

    def test_empty_sequence(self):
        p = init_params(3, [4], 2, seed=0)
        with pytest.raises(ValueError):
            forward(p, np.zeros((0, 3)))

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_params(3, [4], 2, seed=0), np.zeros((2, 4)))

    def test_predict_is_forward(self):
        p = init_params(3, [4, 4], 2, seed=9)
        x = np.random.default_rng(1).random((12, 3))
        assert np.array_equal(predict(p, x), forward(p, x)[0])
        assert np.array_equal(predict(p, x), predict(p, x))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 12))
    def test_bounds_and_order_sensitivity(self, seed, T):
        rng = np.random.default_rng(seed)
        p = init_params(3, [4, 3], 2, seed=seed % 1000)
        for t in p.tensors():
            t[:] = rng.normal(0, 1.5, t.shape)
        x = rng.normal(0, 3, (T, 3))
        scores, trace = forward(p, x)
        assert ((scores > 0) & (scores < 1)).all()
        for lt in trace.layers:
            assert ((lt.acts[:, :3 * lt.c.shape[1]] >= 0) &
                    (lt.acts[:, :3 * lt.c.shape[1]] <= 1)).all()
            assert (np.abs(lt.h) < 1).all()
        if T > 1 and not np.allclose(x, x[::-1]):
            assert np.abs(predict(p, x[::-1]) - scores).max() > 1e-9

    def test_input_normalization(self):
        p = init_params(2, [3], 1, seed=0, input_shift=[0.5, 0.1], input_scale=[2.0, 4.0])
        q = init_params(2, [3], 1, seed=0)
        x = np.random.default_rng(0).random((5, 2))
        np.testing.assert_array_equal(predict(p, x), predict(q, (x - [0.5, 0.1]) * [2.0, 4.0]))


class TestBackward:
    def test_gradient_check(self, backend):
        for rel, _ in oracles.gradient_check_instances(n_instances=4):
            assert rel < 1e-5

    def test_gradient_check_large_weights(self, backend):
        for rel, _ in oracles.gradient_check_instances(n_instances=3, weight_sd=0.5):
            assert rel < 1e-5

    def test_backends_agree(self):
        if kernels.compiled_backend is None:
            pytest.skip("compiled kernels not built")
        rng = np.random.default_rng(0)
        xproj = rng.normal(size=(40, 24))
        U = rng.normal(0, 0.3, (24, 6))
        a = kernels.compiled_backend.layer_forward(xproj, U)
        b = kernels.python_backend.layer_forward(xproj, U)
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, rtol=0, atol=1e-13)
        dh = rng.normal(size=(40, 6))
        for t_stop in (0, 17, 39):
            np.testing.assert_allclose(
                kernels.compiled_backend.layer_backward(a[0], a[1], U, dh, t_stop),
                kernels.python_backend.layer_backward(b[0], b[1], U, dh, t_stop),
                rtol=0, atol=1e-12)

    def test_saturated_targets(self):
        p = zero_params(2, [3], 2)
        p.head_b[:] = [40.0, -40.0]
        x = np.ones((4, 2))
        _, trace = forward(p, x)
        g = backward(p, trace, [1.0, 0.0])
        assert training.global_norm(g) < 1e-15

    def test_truncation(self):
        rng = np.random.default_rng(3)
        p = init_params(3, [4, 4], 2, seed=3)
        x = rng.random((8, 3))
        y = np.array([1.0, 0.0])
        _, trace = forward(p, x)
        full = backward(p, trace, y)
        same = backward(p, trace, y, truncate_k=8)
        longer = backward(p, trace, y, truncate_k=100)
        for a, b, c in zip(full.tensors(), same.tensors(), longer.tensors()):
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(a, c)
        # k = 1: only the last step's input reaches the first layer's W
        one = backward(p, trace, y, truncate_k=1)
        assert np.linalg.matrix_rank(one.layers[0].W) <= 1
        prev = None
        for k in range(1, 9):
            g = backward(p, trace, y, truncate_k=k)
            support = [t != 0 for t in g.tensors()]
            if prev is not None:
                for s, q in zip(support, prev):
                    assert (s | ~q).all()  # superset
            prev = support

    def test_mismatch(self):
        p = init_params(3, [4], 2, seed=0)
        q = init_params(3, [5], 2, seed=0)
        _, trace = forward(p, np.ones((3, 3)))
        with pytest.raises(ValueError):
            backward(q, trace, [0.0, 1.0])
        with pytest.raises(ValueError):
            backward(p, trace, [0.0, 1.0, 1.0])


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        p = init_params(3, [4, 5], 6, seed=2, chrono_max=50, input_shift=rng.random(3),
                        input_scale=rng.random(3) + 1)
        for t in p.tensors():
            t[:] = rng.normal(size=t.shape) / 3.0
        save_params(p, tmp_path / "m.json", seed=2)
        q = load_params(tmp_path / "m.json")
        for a, b in zip(p.tensors() + [p.input_shift, p.input_scale],
                        q.tensors() + [q.input_shift, q.input_scale]):
            np.testing.assert_array_equal(a, b)
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["manifest"]["hidden_sizes"] == [4, 5]
        assert doc["manifest"]["gate_order"] == ["i", "f", "o", "c"]

    def test_rejects_other_formats(self):
        with pytest.raises(ValueError):
            lstm_net.params_from_json({"manifest": {"format": "other"}, "tensors": {}})

    def test_copy_is_deep(self):
        p = init_params(3, [4], 2, seed=0)
        q = p.copy()
        q.layers[0].W[0, 0] += 1
        q.input_shift[0] = 9
        assert p.layers[0].W[0, 0] != q.layers[0].W[0, 0] and p.input_shift[0] == 0
        assert isinstance(q, LstmParams)
