import math

import numpy as np
import pytest

from phenoseq.baselines import (BaseRateModel, LinearModel, engineered_features,
                                feature_matrix, fit_base_rate, fit_logistic,
                                logistic_objective, predict_linear, raw12_features, select_l2)
from phenoseq.episode_store import LabelVocabulary, label_incidence
from phenoseq.metrics import macro_auc, precision_at_k
from phenoseq.preprocess import GridEpisode

from conftest import episode, random_grid_episodes


class TestBaseRate:
    def test_macro_auc_half(self):
        rng = np.random.default_rng(0)
        train = random_grid_episodes(rng, 50, n_labels=12)
        test = random_grid_episodes(rng, 40, n_labels=12)
        Y = np.array([g.label_vec for g in test])
        assert ((Y.sum(0) > 0) & (Y.sum(0) < len(test))).all()
        S = fit_base_rate(train).predict(len(test))
        assert abs(macro_auc(S, Y) - 0.5) <= 1e-12
        order = np.argsort(-S, axis=1, kind="stable")[:, :10]
        assert (order == order[0]).all()

    def test_matches_label_incidence(self):
        vocab = LabelVocabulary(("a", "b", "c"))
        eps = [episode(f"e{i}", labels=ls) for i, ls in enumerate([["a"], ["a", "c"], [], ["c"]])]
        grids = [GridEpisode(e.episode_id, np.zeros((1, 1)),
                             np.array([float(n in e.labels) for n in vocab.names])) for e in eps]
        np.testing.assert_array_equal(fit_base_rate(grids).incidence, label_incidence(eps, vocab))

    def test_scaling_keeps_p_at_k(self):
        rng = np.random.default_rng(2)
        train = random_grid_episodes(rng, 30, n_labels=15)
        test = random_grid_episodes(rng, 20, n_labels=15)
        Y = np.array([g.label_vec for g in test])
        m = fit_base_rate(train)
        scaled = BaseRateModel(m.incidence * 0.123)
        assert precision_at_k(m.predict(20), Y, 10) == precision_at_k(scaled.predict(20), Y, 10)


class TestFeatures:
    def test_raw12(self):
        g = np.arange(15 * 13, dtype=float).reshape(15, 13)
        f = raw12_features(g)
        assert f.shape == (156,)
        np.testing.assert_array_equal(f, g[3:].ravel())
        np.testing.assert_array_equal(raw12_features(g[:12]), g.ravel()[:156])
        np.testing.assert_array_equal(raw12_features(np.full((20, 2), 0.3)), 0.3)
        with pytest.raises(ValueError):
            raw12_features(g[:11])

    def test_engineered_constant(self):
        f = engineered_features(np.full((5, 1), 0.4))
        np.testing.assert_array_equal(f[:7], [0.4, 0.4, 0.4, 0.4, 0.4, 0.0, 0.0])
        assert f[7] == 5 / 720

    def test_engineered_two_points(self):
        f = engineered_features(np.array([[0.0], [1.0]]))
        assert f[6] == 1.0 and f[4] == 0.5

    def test_engineered_width_and_slope_oracle(self):
        rng = np.random.default_rng(0)
        g = rng.random((30, 13))
        f = engineered_features(g)
        assert f.shape == (92,)
        for v in range(13):
            slope = np.polyfit(np.arange(30), g[:, v], 1)[0]
            assert f[7 * v + 6] == pytest.approx(slope, abs=1e-12)
            assert f[7 * v + 5] == pytest.approx(g[:, v].std(), abs=1e-15)

    def test_single_row(self):
        f = engineered_features(np.array([[0.2, 0.7]]))
        assert np.isfinite(f).all() and f[6] == 0.0

    def test_pure(self):
        g = np.random.default_rng(1).random((14, 3))
        before = g.copy()
        a = feature_matrix([g], "engineered")
        b = feature_matrix([g], "engineered")
        assert np.array_equal(a, b) and np.array_equal(g, before)
        with pytest.raises(ValueError):
            feature_matrix([g], "fancy")


def _separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    return x, (x > 0).astype(float)


class TestLogistic:
    def test_zero_iterations(self):
        X, Y = _separable()
        m = fit_logistic(X, Y, 0.01, max_iter=0)
        np.testing.assert_array_equal(predict_linear(m, X), 0.5)

    def test_sign(self):
        X, Y = _separable()
        assert fit_logistic(X, Y, 1e-3).W[0, 0] > 0
        assert fit_logistic(-X, Y, 1e-3).W[0, 0] < 0

    def test_converges_to_gradient_tolerance(self):
        rng = np.random.default_rng(3)
        X = rng.random((200, 8))
        Y = (rng.random((200, 4)) < 0.3).astype(float)
        Y[:, 0] = X[:, 0] > 0.5
        m = fit_logistic(X, Y, 1e-3)
        assert m.n_iter < 10000
        # independent gradient recomputation
        P = 1 / (1 + np.exp(-(X @ m.W + m.b)))
        gW = X.T @ (P - Y) / 200 + 2e-3 * m.W
        gb = (P - Y).mean(axis=0)
        assert np.sqrt((gW ** 2).sum(0) + gb ** 2).max() < 1e-6

    def test_objective_gradient_finite_difference(self):
        rng = np.random.default_rng(4)
        X, Y = rng.normal(size=(30, 3)), (rng.random((30, 2)) < 0.5).astype(float)
        W, b = rng.normal(size=(3, 2)), rng.normal(size=2)
        _, gW, gb = logistic_objective(X, Y, W, b, 0.1)
        h = 1e-6
        for idx in np.ndindex(W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += h
            Wm[idx] -= h
            num = (logistic_objective(X, Y, Wp, b, 0.1)[0][idx[1]]
                   - logistic_objective(X, Y, Wm, b, 0.1)[0][idx[1]]) / (2 * h)
            assert gW[idx] == pytest.approx(num, abs=1e-7)

    def test_regularization_path(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 4))
        Y = (X @ rng.normal(size=(4, 3)) + rng.normal(size=(100, 3)) > 0).astype(float)
        norms = [np.linalg.norm(fit_logistic(X, Y, l2).W, axis=0)
                 for l2 in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)]
        for a, b in zip(norms, norms[1:]):
            assert (b < a).all()

    def test_label_permutation(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(80, 3))
        Y = (rng.random((80, 4)) < 0.4).astype(float)
        perm = [2, 0, 3, 1]
        a = fit_logistic(X, Y, 1e-2)
        b = fit_logistic(X, Y[:, perm], 1e-2)
        np.testing.assert_allclose(b.W, a.W[:, perm], atol=1e-12)

    def test_non_finite_features(self):
        X, Y = _separable()
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            fit_logistic(X, Y, 0.1)

    def test_predict_oracle_and_monotone(self):
        rng = np.random.default_rng(7)
        m = LinearModel(rng.normal(size=(5, 3)), rng.normal(size=3), 0.1)
        x = rng.normal(size=5)
        s = predict_linear(m, x)
        for j in range(3):
            z = sum(m.W[f, j] * x[f] for f in range(5)) + m.b[j]
            assert s[j] == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-15)
        f = int(np.argmax(m.W[:, 0]))
        bumped = x.copy()
        bumped[f] += 1.0
        assert predict_linear(m, bumped)[0] > s[0]
        with pytest.raises(ValueError):
            predict_linear(m, np.zeros(4))
        zero = LinearModel(np.zeros((5, 3)), np.zeros(3), 0.0)
        np.testing.assert_array_equal(predict_linear(zero, x), 0.5)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        m = LinearModel(rng.normal(size=(4, 2)), rng.normal(size=2), 0.01, "engineered", 17)
        m.save(tmp_path / "m.json")
        back = LinearModel.load(tmp_path / "m.json")
        assert np.array_equal(back.W, m.W) and np.array_equal(back.b, m.b)
        assert (back.l2, back.schema, back.n_iter) == (0.01, "engineered", 17)

    def test_select_l2(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(120, 3))
        Y = (X[:, :1] + 0.5 * rng.normal(size=(120, 1)) > 0).astype(float)
        model, scores = select_l2(X[:80], Y[:80], X[80:], Y[80:], [1e-3, 10.0])
        assert set(scores) == {1e-3, 10.0}
        assert model.l2 == max(scores, key=scores.get)
