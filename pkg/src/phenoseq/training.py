"""Online SGD with momentum for the LSTM: loss, clipping, updates, early stopping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import lstm_net
from .lstm_net import Gradients, LstmParams
from .metrics import micro_auc

log = logging.getLogger(__name__)

EPS = 1e-12


class NonFiniteLossError(ArithmeticError):
    """Training produced a non-finite loss on a specific episode."""

    def __init__(self, episode_id: str, epoch: int, loss: float):
        self.episode_id = episode_id
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss} on episode {episode_id!r} in epoch {epoch}; "
                         "epoch aborted")


INPUT_NORMS = ("none", "center", "standardize")


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-5
    clip_norm: float | None = 5.0
    truncate_k: int | None = None
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    chrono_max: int | None = None
    input_norm: str = "none"  # none | center | standardize
    recurrent_lr_scale: float = 1.0

    def __post_init__(self):
        if self.input_norm not in INPUT_NORMS:
            raise ValueError(f"input_norm must be one of {INPUT_NORMS}")
        if not self.recurrent_lr_scale >= 0:
            raise ValueError("recurrent_lr_scale must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0 or None")
        if self.truncate_k is not None and self.truncate_k < 1:
            raise ValueError("truncate_k must be >= 1 or None")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s) {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_micro_auc: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_micro_auc(self) -> float:
        return self.val_micro_auc[self.best_epoch] if self.best_epoch >= 0 else math.nan

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_micro_auc": self.val_micro_auc,
                "best_epoch": self.best_epoch}


def bce_loss(scores, targets) -> float:
    """Summed binary cross-entropy over output nodes, scores clamped to [eps, 1-eps]."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if scores.shape != targets.shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs targets {targets.shape}")
    s = np.clip(scores, EPS, 1.0 - EPS)
    return float(-np.sum(targets * np.log(s) + (1.0 - targets) * np.log1p(-s)))


def global_norm(g: Gradients) -> float:
    return math.sqrt(sum(float(np.dot(t.ravel(), t.ravel())) for t in g.tensors()))


def clip_gradients(g: Gradients, clip_norm: float) -> Gradients:
    """Rescale all tensors by clip_norm / norm when the global L2 norm exceeds clip_norm."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be > 0")
    norm = global_norm(g)
    if norm <= clip_norm:
        return g
    out = g.copy()
    scale = clip_norm / norm
    for t in out.tensors():
        t *= scale
    # rounding can leave the norm a few ulps above clip_norm; shrink until it is not
    new = global_norm(out)
    while new > clip_norm:
        for t in out.tensors():
            t *= (clip_norm / new) * (1.0 - 4.0 * np.finfo(np.float64).eps)
        new = global_norm(out)
    return out


def _momentum_update(params: LstmParams, grads: Gradients, vel: LstmParams,
                     cfg: TrainConfig) -> None:
    recurrent = {id(layer.U) for layer in params.layers}
    for p, g, v, is_weight in zip(params.tensors(), grads.tensors(), vel.tensors(),
                                  params.weight_mask()):
        # hidden-to-hidden matrices may run at a reduced rate
        lr = cfg.learning_rate * (cfg.recurrent_lr_scale if id(p) in recurrent else 1.0)
        step = g + cfg.weight_decay * p if is_weight and cfg.weight_decay else g
        v *= cfg.momentum
        v -= lr * step
        p += v


def sgd_momentum_step(params: LstmParams, grads: Gradients, vel: LstmParams,
                      cfg: TrainConfig) -> tuple[LstmParams, LstmParams]:
    """Classical momentum; weight decay applies to weight matrices only.

    Returns new (params, velocity); the inputs are left untouched.
    """
    new_params, new_vel = params.copy(), vel.copy()
    _momentum_update(new_params, grads, new_vel, cfg)
    return new_params, new_vel


def predict_all(params: LstmParams, grids) -> np.ndarray:
    return np.array([lstm_net.predict(params, g) for g in grids])


def evaluate_micro_auc(params: LstmParams, grids) -> float:
    if not grids:
        return math.nan
    scores = predict_all(params, grids)
    truth = np.array([g.label_vec for g in grids])
    return micro_auc(scores, truth)


def input_moments(grids) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable mean and standard deviation over every hour of every grid."""
    rows = np.concatenate([g.values for g in grids])
    return rows.mean(axis=0), rows.std(axis=0)


def input_normalization(grids, mode: str) -> tuple[np.ndarray | None, np.ndarray | None]:
    """(shift, scale) for ``LstmParams``; constant variables keep scale 1."""
    if mode == "none":
        return None, None
    mean, sd = input_moments(grids)
    if mode == "center":
        return mean, None
    return mean, np.where(sd > 1e-8, 1.0 / np.maximum(sd, 1e-8), 1.0)


def train(train_set: Sequence, val_set: Sequence, hidden_sizes: Sequence[int],
          cfg: TrainConfig, *, init: LstmParams | None = None,
          on_epoch: Callable[[int, TrainHistory], None] | None = None
          ) -> tuple[LstmParams, TrainHistory]:
    """Batch-size-1 training with validation micro-AUC early stopping.

    Returns the parameters from the best validation epoch. Without a validation
    set every epoch counts as an improvement and the last parameters are kept.
    """
    if not train_set:
        raise ValueError("training set is empty")
    n_inputs = train_set[0].values.shape[1]
    n_labels = train_set[0].label_vec.shape[0]
    if init is not None:
        params = init.copy()
    else:
        shift, scale = input_normalization(train_set, cfg.input_norm)
        params = lstm_net.init_params(n_inputs, hidden_sizes, n_labels, cfg.seed,
                                      cfg.chrono_max, shift, scale)
    vel = params.zeros_like()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best = params.copy()
    best_auc = -math.inf
    stale = 0

    for epoch in range(cfg.max_epochs):
        total = 0.0
        for idx in rng.permutation(len(train_set)):
            g = train_set[idx]
            scores, trace = lstm_net.forward(params, g)
            loss = bce_loss(scores, g.label_vec)
            if not math.isfinite(loss):
                raise NonFiniteLossError(g.episode_id, epoch, loss)
            total += loss
            grads = lstm_net.backward(params, trace, g.label_vec, cfg.truncate_k)
            if cfg.clip_norm is not None:
                grads = clip_gradients(grads, cfg.clip_norm)
            _momentum_update(params, grads, vel, cfg)
        history.train_loss.append(total / len(train_set))

        auc = evaluate_micro_auc(params, val_set) if val_set else math.nan
        history.val_micro_auc.append(auc)
        if not val_set or auc > best_auc:
            best_auc = auc
            best = params.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        log.info("epoch %d: train loss %.5f, val micro AUC %.5f", epoch,
                 history.train_loss[-1], auc)
        if on_epoch is not None:
            on_epoch(epoch, history)
        if stale > cfg.patience:
            break
    if val_set:
        return best, history
    return params, history
