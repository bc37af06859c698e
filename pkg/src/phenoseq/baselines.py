"""Comparison models: incidence ranker and L2-regularized one-vs-rest logistic regression."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import sigmoid
from .metrics import micro_auc
from .preprocess import MAX_HOURS

log = logging.getLogger(__name__)

RAW_WINDOW_HOURS = 12
SCHEMAS = ("raw12", "engineered")
N_STATS = 7  # first, last, min, max, mean, std, slope


@dataclass
class BaseRateModel:
    incidence: np.ndarray

    def predict(self, n_episodes: int) -> np.ndarray:
        return np.tile(self.incidence, (n_episodes, 1))


def fit_base_rate(train_grids: Sequence) -> BaseRateModel:
    if not train_grids:
        raise ValueError("training set is empty")
    return BaseRateModel(np.mean([g.label_vec for g in train_grids], axis=0))


def raw12_features(g) -> np.ndarray:
    """Last 12 hourly rows flattened row-major (12 * V values)."""
    values = getattr(g, "values", g)
    if values.shape[0] < RAW_WINDOW_HOURS:
        raise ValueError(f"need at least {RAW_WINDOW_HOURS} hours, got {values.shape[0]}")
    return values[-RAW_WINDOW_HOURS:].ravel().copy()


def engineered_features(g) -> np.ndarray:
    """Per variable: first, last, min, max, mean, std, slope per hour; then T / 720.

    Layout is statistic-major within each variable (7 values per variable).
    """
    values = np.asarray(getattr(g, "values", g), dtype=np.float64)
    T, V = values.shape
    if T < 1:
        raise ValueError("empty grid")
    hours = np.arange(T, dtype=np.float64)
    centred = hours - hours.mean()
    denom = float(centred @ centred)
    slope = centred @ (values - values.mean(axis=0)) / denom if denom > 0 else np.zeros(V)
    stats = np.stack([
        values[0], values[-1], values.min(axis=0), values.max(axis=0),
        values.mean(axis=0), values.std(axis=0), slope,
    ], axis=1)
    return np.concatenate([stats.ravel(), [T / MAX_HOURS]])


FEATURE_FUNCS = {"raw12": raw12_features, "engineered": engineered_features}


def feature_matrix(grids: Sequence, schema: str) -> np.ndarray:
    try:
        fn = FEATURE_FUNCS[schema]
    except KeyError:
        raise ValueError(f"unknown feature schema {schema!r}") from None
    return np.array([fn(g) for g in grids])


@dataclass
class LinearModel:
    W: np.ndarray  # F x L
    b: np.ndarray  # L
    l2: float
    schema: str = "raw12"
    n_iter: int = 0

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    def to_json(self) -> dict:
        return {
            "manifest": {"format": "phenoseq-linear", "version": 1, "schema": self.schema,
                         "n_features": self.n_features, "n_labels": self.W.shape[1],
                         "l2": self.l2, "n_iter": self.n_iter},
            "tensors": {
                "W": {"shape": list(self.W.shape), "data": self.W.ravel().tolist()},
                "b": {"shape": list(self.b.shape), "data": self.b.tolist()},
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LinearModel":
        m = doc["manifest"]
        if m.get("format") != "phenoseq-linear":
            raise ValueError("not a linear-model checkpoint")
        t = doc["tensors"]
        W = np.array(t["W"]["data"], dtype=np.float64).reshape(t["W"]["shape"])
        b = np.array(t["b"]["data"], dtype=np.float64).reshape(t["b"]["shape"])
        return cls(W, b, float(m["l2"]), m["schema"], int(m.get("n_iter", 0)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, allow_nan=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def logistic_objective(X, Y, W, b, l2):
    """Per-label mean BCE + l2 * ||w_j||^2 and its gradients (bias unregularized)."""
    Z = X @ W + b
    # log(1 + e^z) - y z, computed without overflow
    losses = (np.logaddexp(0.0, Z) - Y * Z).mean(axis=0) + l2 * (W * W).sum(axis=0)
    R = (sigmoid(Z) - Y) / X.shape[0]
    gW = X.T @ R + 2.0 * l2 * W
    gb = R.sum(axis=0)
    return losses, gW, gb


def fit_logistic(X, Y, l2: float, seed: int = 0, *, tol: float = 1e-6,
                 max_iter: int = 10000, schema: str = "raw12") -> LinearModel:
    """Independent per-label fits by accelerated gradient descent.

    Nesterov extrapolation with backtracking (step halving on the sufficient
    decrease test) and a restart whenever the objective goes up. A label stops
    once the norm of its (w, b) gradient drops below ``tol``. Weights start at
    zero, so ``seed`` only labels the run.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ValueError("need a nonempty N x F feature matrix and N x L label matrix")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    F, L = X.shape[1], Y.shape[1]
    W = np.zeros((F, L))
    b = np.zeros(L)
    # 1/Lipschitz bound of the mean logistic loss
    step = np.full(L, 1.0 / (0.25 * (np.sum(X * X, axis=1).mean() + 1.0) + 2.0 * l2))
    momentum_t = np.ones(L)
    loss, gW, gb = logistic_objective(X, Y, W, b, l2)
    yW, yb = W.copy(), b.copy()
    y_loss, y_gW, y_gb = loss.copy(), gW.copy(), gb.copy()
    active = np.ones(L, dtype=bool)
    it = 0
    while it < max_iter:
        active &= np.sqrt((gW * gW).sum(axis=0) + gb * gb) >= tol
        if not active.any():
            break
        cols = np.flatnonzero(active)
        Yc = Y[:, cols]
        g2 = (y_gW[:, cols] ** 2).sum(axis=0) + y_gb[cols] ** 2
        s = step[cols]
        while True:
            W_new = yW[:, cols] - s * y_gW[:, cols]
            b_new = yb[cols] - s * y_gb[cols]
            new_loss, new_gW, new_gb = logistic_objective(X, Yc, W_new, b_new, l2)
            ok = new_loss <= y_loss[cols] - 0.5 * s * g2
            ok |= s < 1e-16  # roundoff floor: accept a negligible step
            if ok.all():
                break
            s = np.where(ok, s, s * 0.5)
        step[cols] = s
        t = momentum_t[cols]
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        restart = new_loss > loss[cols]
        beta = np.where(restart, 0.0, (t - 1.0) / t_next)
        yW[:, cols] = W_new + beta * (W_new - W[:, cols])
        yb[cols] = b_new + beta * (b_new - b[cols])
        momentum_t[cols] = np.where(restart, 1.0, t_next)
        W[:, cols], b[cols] = W_new, b_new
        loss[cols], gW[:, cols], gb[cols] = new_loss, new_gW, new_gb
        y_loss[cols], y_gW[:, cols], y_gb[cols] = logistic_objective(
            X, Yc, yW[:, cols], yb[cols], l2)
        it += 1
    log.debug("logistic fit stopped after %d iterations", it)
    return LinearModel(W, b, float(l2), schema, it)


def predict_linear(m: LinearModel, features) -> np.ndarray:
    """Scores sigma(w_j . f + b_j) for one feature vector or a matrix of them."""
    F = np.asarray(features, dtype=np.float64)
    if F.shape[-1] != m.n_features:
        raise ValueError(f"feature width {F.shape[-1]} does not match model ({m.n_features})")
    return sigmoid(F @ m.W + m.b)


def select_l2(X_train, Y_train, X_val, Y_val, grid: Sequence[float], schema: str = "raw12",
              **fit_kwargs) -> tuple[LinearModel, dict[float, float]]:
    """Fit one model per l2 value and keep the best by validation micro AUC."""
    results = {}
    best, best_auc = None, -np.inf
    for l2 in grid:
        model = fit_logistic(X_train, Y_train, l2, schema=schema, **fit_kwargs)
        score = micro_auc(predict_linear(model, X_val), Y_val)
        results[float(l2)] = score
        if score > best_auc:
            best, best_auc = model, score
    return best, results
