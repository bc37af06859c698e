"""Ranking and thresholded metrics for multilabel score matrices.

AUC is the Mann-Whitney statistic with half credit for ties. Macro averages
skip labels where the metric is undefined.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


def _as_matrix(scores, truth) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    if truth.ndim == 1:
        truth = truth[:, None]
    if scores.shape != truth.shape:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} differ in shape")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return scores, truth


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    ranks = np.empty(n)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auc(scores, truth) -> float:
    """Probability a random positive outranks a random negative; NaN if undefined."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel() > 0.5
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must have the same length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    rank_sum = midranks(scores)[truth].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def micro_auc(scores, truth) -> float:
    scores, truth = _as_matrix(scores, truth)
    return auc(scores.ravel(), truth.ravel())


def per_label_auc(scores, truth) -> np.ndarray:
    scores, truth = _as_matrix(scores, truth)
    return np.array([auc(scores[:, j], truth[:, j]) for j in range(scores.shape[1])])


def macro_auc(scores, truth) -> float:
    """Mean per-label AUC over labels with at least one positive and one negative."""
    values = per_label_auc(scores, truth)
    defined = values[~np.isnan(values)]
    return float(defined.mean()) if defined.size else math.nan


def _confusion(scores, truth, threshold):
    scores, truth = _as_matrix(scores, truth)
    pred = scores >= threshold
    pos = truth > 0.5
    tp = (pred & pos).sum(axis=0)
    fp = (pred & ~pos).sum(axis=0)
    fn = (~pred & pos).sum(axis=0)
    return tp, fp, fn


def f1_micro(scores, truth, threshold: float = 0.5) -> float:
    """Pooled F1; 0.0 when there are no true or predicted positives at all."""
    tp, fp, fn = (int(a.sum()) for a in _confusion(scores, truth, threshold))
    if tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def per_label_f1(scores, truth, threshold: float = 0.5) -> np.ndarray:
    """F1 per label; NaN where the label has neither true nor predicted positives."""
    tp, fp, fn = _confusion(scores, truth, threshold)
    denom = 2.0 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2.0 * tp / denom, np.nan)


def f1_macro(scores, truth, threshold: float = 0.5) -> float:
    values = per_label_f1(scores, truth, threshold)
    defined = values[~np.isnan(values)]
    return float(defined.mean()) if defined.size else 0.0


def top_k_labels(scores, k: int) -> np.ndarray:
    """Indices of the k highest scores per row; ties go to the lower label index."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    # stable sort on the negated scores keeps ascending index order within ties
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def precision_at_k(scores, truth, k: int = 10) -> float:
    scores, truth = _as_matrix(scores, truth)
    if scores.shape[1] < k:
        raise ValueError(f"precision at {k} needs at least {k} labels, got {scores.shape[1]}")
    if scores.shape[0] == 0:
        return math.nan
    top = top_k_labels(scores, k)
    hits = np.take_along_axis(truth, top, axis=1)
    return float(hits.sum(axis=1).mean() / k)


def precision_at_k_ceiling(truth, k: int = 10) -> float:
    """Best achievable precision at k: mean over episodes of min(|labels|, k) / k."""
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    counts = truth.sum(axis=1)
    return float(np.minimum(counts, k).mean() / k)


@dataclass
class LabelMetrics:
    label: str
    auc: float | None
    f1: float | None
    support: int


@dataclass
class MetricsReport:
    micro_auc: float
    macro_auc: float
    micro_f1: float
    macro_f1: float
    precision_at_k: float
    k: int
    max_precision_at_k: float
    n_episodes: int
    n_labels_auc_undefined: int
    degenerate_f1: bool
    per_label: list[LabelMetrics] = field(default_factory=list)
    model: str = ""

    # field order doubles as the table column order
    HEADLINE = ("micro_auc", "macro_auc", "micro_f1", "macro_f1", "precision_at_k")

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key, value in doc.items():
            if isinstance(value, float) and math.isnan(value):
                doc[key] = None
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        doc = dict(doc)
        doc["per_label"] = [LabelMetrics(**x) for x in doc.get("per_label", [])]
        for key in cls.HEADLINE + ("max_precision_at_k",):
            if doc.get(key) is None:
                doc[key] = math.nan
        return cls(**doc)


def _nan_to_none(x: float) -> float | None:
    return None if math.isnan(x) else float(x)


def build_report(scores, truth, vocab: Sequence[str] | None = None, k: int = 10,
                 threshold: float = 0.5, model: str = "") -> MetricsReport:
    scores, truth = _as_matrix(scores, truth)
    n_labels = scores.shape[1]
    names = list(vocab) if vocab is not None else [str(j) for j in range(n_labels)]
    if len(names) != n_labels:
        raise ValueError("vocabulary size does not match the score matrix")
    label_auc = per_label_auc(scores, truth)
    label_f1 = per_label_f1(scores, truth, threshold)
    tp, fp, fn = _confusion(scores, truth, threshold)
    per_label = [
        LabelMetrics(names[j], _nan_to_none(label_auc[j]), _nan_to_none(label_f1[j]),
                     int(truth[:, j].sum()))
        for j in range(n_labels)
    ]
    return MetricsReport(
        micro_auc=micro_auc(scores, truth),
        macro_auc=macro_auc(scores, truth),
        micro_f1=f1_micro(scores, truth, threshold),
        macro_f1=f1_macro(scores, truth, threshold),
        precision_at_k=precision_at_k(scores, truth, k) if n_labels >= k else math.nan,
        k=k,
        max_precision_at_k=precision_at_k_ceiling(truth, k),
        n_episodes=scores.shape[0],
        n_labels_auc_undefined=int(np.isnan(label_auc).sum()),
        degenerate_f1=int(tp.sum() + fp.sum() + fn.sum()) == 0,
        per_label=per_label,
        model=model,
    )


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Plain-text table: Model, Micro AUC, Macro AUC, Micro F1, Macro F1, Precision at k."""
    k = reports[0].k if reports else 10
    header = ["Model", "Micro AUC", "Macro AUC", "Micro F1", "Macro F1", f"Precision at {k}"]
    rows = [[r.model or "-"] + [
        "n/a" if math.isnan(getattr(r, key)) else f"{getattr(r, key):.4f}"
        for key in MetricsReport.HEADLINE] for r in reports]
    widths = [max(len(str(row[c])) for row in [header] + rows) for c in range(len(header))]
    lines = []
    for row in [header] + rows:
        cells = [row[0].ljust(widths[0])] + [row[c].rjust(widths[c]) for c in range(1, len(row))]
        lines.append("  ".join(cells))
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
