"""Stacked LSTM (forget gates, no peepholes) with a sigmoid multilabel head.

Each layer stores its four gates stacked along the first axis in the order
input, forget, output, candidate: ``W`` is 4H x D, ``U`` is 4H x H and ``b``
has length 4H. Only the top layer's last hidden state feeds the head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .kernels import sigmoid

GATES = ("i", "f", "o", "c")
CHECKPOINT_VERSION = 1


@dataclass
class LayerParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views (W_g, U_g, b_g) for one gate."""
        k = GATES.index(name)
        H = self.hidden_size
        s = slice(k * H, (k + 1) * H)
        return self.W[s], self.U[s], self.b[s]

    def check(self) -> None:
        H = self.hidden_size
        if self.W.shape[0] != 4 * H or self.U.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")


@dataclass
class LstmParams:
    """Trainable tensors plus a fixed per-variable input normalization.

    Every input row becomes ``(x - input_shift) * input_scale`` before the first
    layer. Shift and scale are not trained and are not part of ``tensors()``.
    """

    layers: list[LayerParams]
    head_W: np.ndarray
    head_b: np.ndarray
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.input_shift is None:
            self.input_shift = np.zeros(self.layers[0].input_size)
        if self.input_scale is None:
            self.input_scale = np.ones(self.layers[0].input_size)

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.hidden_size for layer in self.layers]

    @property
    def n_labels(self) -> int:
        return self.head_W.shape[0]

    def tensors(self) -> list[np.ndarray]:
        """All arrays in a fixed order; shared by params, gradients and velocities."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.U, layer.b))
        out.extend((self.head_W, self.head_b))
        return out

    def tensor_names(self) -> list[str]:
        names = []
        for n, _ in enumerate(self.layers, start=1):
            names.extend((f"layer{n}.W", f"layer{n}.U", f"layer{n}.b"))
        names.extend(("head.W", "head.b"))
        return names

    def weight_mask(self) -> list[bool]:
        """True for weight matrices, False for bias vectors."""
        return [t.ndim == 2 for t in self.tensors()]

    def zeros_like(self) -> "LstmParams":
        return LstmParams(
            [LayerParams(np.zeros_like(l.W), np.zeros_like(l.U), np.zeros_like(l.b))
             for l in self.layers],
            np.zeros_like(self.head_W), np.zeros_like(self.head_b),
            self.input_shift.copy(), self.input_scale.copy())

    def copy(self) -> "LstmParams":
        return LstmParams(
            [LayerParams(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers],
            self.head_W.copy(), self.head_b.copy(),
            self.input_shift.copy(), self.input_scale.copy())

    def check(self) -> None:
        if not self.layers:
            raise ValueError("need at least one LSTM layer")
        width = self.layers[0].input_size
        for layer in self.layers:
            layer.check()
            if layer.input_size != width:
                raise ValueError("layer input width does not match the layer below")
            width = layer.hidden_size
        if self.head_W.shape[1] != width or self.head_b.shape != (self.head_W.shape[0],):
            raise ValueError("head shape does not match the top layer")
        if (self.input_shift.shape != (self.input_size,)
                or self.input_scale.shape != (self.input_size,)):
            raise ValueError("input_shift and input_scale need one entry per input variable")


Gradients = LstmParams


@dataclass
class StepTrace:
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c_tilde: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass
class LayerTrace:
    x: np.ndarray  # T x D inputs
    acts: np.ndarray  # T x 4H gate activations
    c: np.ndarray  # T x H
    h: np.ndarray  # T x H

    def gate(self, name: str) -> np.ndarray:
        H = self.c.shape[1]
        k = GATES.index(name)
        return self.acts[:, k * H:(k + 1) * H]


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]
    logits: np.ndarray
    scores: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.layers[0].x.shape[0]


def init_params(n_inputs: int, hidden_sizes: Sequence[int], n_labels: int,
                seed: int, chrono_max: int | None = None, input_shift=None,
                input_scale=None) -> LstmParams:
    """Uniform(-r, r) weights with r = 1/sqrt(fan-in); forget biases 1, other biases 0.

    With ``chrono_max`` set, forget biases are instead log(u), u ~ Uniform(1, chrono_max - 1),
    so unit memory timescales spread up to ``chrono_max`` steps from the start of
    training. Input biases stay at 0.
    """
    if n_inputs < 1 or n_labels < 1 or not hidden_sizes or min(hidden_sizes) < 1:
        raise ValueError("all sizes must be >= 1 and at least one layer is required")
    rng = np.random.default_rng(seed)
    layers = []
    width = n_inputs
    for H in hidden_sizes:
        r = 1.0 / np.sqrt(width + H)
        W = rng.uniform(-r, r, size=(4 * H, width))
        U = rng.uniform(-r, r, size=(4 * H, H))
        b = np.zeros(4 * H)
        if chrono_max is None:
            b[H:2 * H] = 1.0
        else:
            b[H:2 * H] = np.log(rng.uniform(1.0, chrono_max - 1.0, size=H))
            b[:H] = 0.0
        layers.append(LayerParams(W, U, b))
        width = H
    r = 1.0 / np.sqrt(width)
    head_W = rng.uniform(-r, r, size=(n_labels, width))
    shift = None if input_shift is None else np.array(input_shift, dtype=np.float64)
    scale = None if input_scale is None else np.array(input_scale, dtype=np.float64)
    p = LstmParams(layers, head_W, np.zeros(n_labels), shift, scale)
    p.check()
    return p


def cell_step(p: LayerParams, x_t, h_prev, c_prev):
    """One LSTM step; returns (h_t, c_t, StepTrace)."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    H = p.hidden_size
    if x_t.shape != (p.input_size,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ValueError("cell_step input shapes do not match the layer")
    z = p.W @ x_t + p.U @ h_prev + p.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    o = sigmoid(z[2 * H:3 * H])
    c_tilde = np.tanh(z[3 * H:])
    c = f * c_prev + i * c_tilde
    h = o * np.tanh(c)
    return h, c, StepTrace(i, f, o, c_tilde, c, h)


def _as_sequence(x) -> np.ndarray:
    values = getattr(x, "values", x)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("input sequence must be a T x V matrix")
    if values.shape[0] == 0:
        raise ValueError("cannot run an LSTM over an empty sequence")
    return values


def forward(p: LstmParams, g) -> tuple[np.ndarray, ForwardTrace]:
    """Scores in (0, 1)^L from the final step, plus the trace needed by backward.

    ``g`` is a GridEpisode or a bare T x V array.
    """
    x = _as_sequence(g)
    if x.shape[1] != p.input_size:
        raise ValueError(f"input width {x.shape[1]} != model input width {p.input_size}")
    if p.input_shift.any():
        x = x - p.input_shift
    if (p.input_scale != 1.0).any():
        x = x * p.input_scale
    traces = []
    for layer in p.layers:
        xproj = x @ layer.W.T + layer.b
        acts, c, h = kernels.layer_forward(xproj, layer.U)
        traces.append(LayerTrace(x, acts, c, h))
        x = h
    logits = p.head_W @ x[-1] + p.head_b
    scores = sigmoid(logits)
    return scores, ForwardTrace(traces, logits, scores)


def predict(p: LstmParams, g) -> np.ndarray:
    return forward(p, g)[0]


def backward(p: LstmParams, trace: ForwardTrace, targets,
             truncate_k: int | None = None) -> Gradients:
    """Exact gradient of the summed binary cross-entropy by BPTT.

    With ``truncate_k`` set, error signals reach only the last ``truncate_k``
    steps of every layer.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if len(trace.layers) != len(p.layers) or targets.shape != trace.scores.shape:
        raise ValueError("trace, targets and parameters disagree")
    if truncate_k is not None and truncate_k < 1:
        raise ValueError("truncate_k must be >= 1")
    T = trace.n_steps
    t_stop = 0 if truncate_k is None else max(0, T - truncate_k)

    dlogits = trace.scores - targets
    top = trace.layers[-1]
    grads = p.zeros_like()
    grads.head_W[:] = np.outer(dlogits, top.h[-1])
    grads.head_b[:] = dlogits

    dh = np.zeros_like(top.h)
    dh[-1] = p.head_W.T @ dlogits
    for n in range(len(p.layers) - 1, -1, -1):
        layer, lt, lg = p.layers[n], trace.layers[n], grads.layers[n]
        if lt.acts.shape[1] != layer.U.shape[0] or lt.x.shape[1] != layer.input_size:
            raise ValueError("trace was not produced by these parameters")
        dz = kernels.layer_backward(lt.acts, lt.c, layer.U, dh, t_stop)
        lg.W[:] = dz.T @ lt.x
        lg.b[:] = dz.sum(axis=0)
        if T > 1:
            lg.U[:] = dz[1:].T @ lt.h[:-1]
        if n > 0:
            dh = np.ascontiguousarray(dz @ layer.W)
    return grads


def params_to_json(p: LstmParams, seed: int | None = None) -> dict:
    return {
        "manifest": {
            "format": "phenoseq-lstm",
            "version": CHECKPOINT_VERSION,
            "input_size": p.input_size,
            "hidden_sizes": p.hidden_sizes,
            "n_labels": p.n_labels,
            "seed": seed,
            "gate_order": list(GATES),
        },
        "input_shift": p.input_shift.tolist(),
        "input_scale": p.input_scale.tolist(),
        "tensors": {
            name: {"shape": list(t.shape), "data": t.ravel().tolist()}
            for name, t in zip(p.tensor_names(), p.tensors())
        },
    }


def params_from_json(doc: dict) -> LstmParams:
    manifest = doc["manifest"]
    if manifest.get("format") != "phenoseq-lstm":
        raise ValueError("not an LSTM checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    tensors = doc["tensors"]

    def load(name):
        t = tensors[name]
        return np.array(t["data"], dtype=np.float64).reshape(t["shape"])

    layers = [LayerParams(load(f"layer{n}.W"), load(f"layer{n}.U"), load(f"layer{n}.b"))
              for n in range(1, len(manifest["hidden_sizes"]) + 1)]
    shift, scale = doc.get("input_shift"), doc.get("input_scale")
    p = LstmParams(layers, load("head.W"), load("head.b"),
                   None if shift is None else np.array(shift, dtype=np.float64),
                   None if scale is None else np.array(scale, dtype=np.float64))
    p.check()
    return p


def save_params(p: LstmParams, path, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        # repr-based float formatting round-trips float64 exactly
        json.dump(params_to_json(p, seed), fh, allow_nan=False)
        fh.write("\n")


def load_params(path) -> LstmParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_json(json.load(fh))
