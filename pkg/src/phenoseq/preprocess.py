"""Irregular episodes to hourly, imputed, [0, 1]-scaled grids.

Stages: hourly mean resampling, forward-then-backward fill, normal-value
imputation for variables never observed, then min-max rescaling with clamping.
Missing cells in intermediate grids are NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .episode_store import CorpusError, Episode, LabelVocabulary, VariableSpec

MAX_HOURS = 720
MISSING = np.nan


@dataclass(frozen=True)
class GridEpisode:
    episode_id: str
    values: np.ndarray  # T x V, float64
    label_vec: np.ndarray  # L, float64 in {0, 1}

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]


def n_hours_for(duration_minutes: int) -> int:
    """Grid length: ceil(duration / 60), at least 1 and at most 720."""
    return min(MAX_HOURS, max(1, math.ceil(duration_minutes / 60)))


def resample_hourly(e: Episode, specs: Sequence[VariableSpec]) -> np.ndarray:
    """Mean of observations per half-open hour [60t, 60(t+1)); NaN where empty.

    Hours are counted from episode start. An observation falling exactly on the
    closing boundary of the last hour is folded into that hour.
    """
    col = {s.name: j for j, s in enumerate(specs)}
    n_rows = n_hours_for(e.duration_minutes)
    n_cols = len(specs)
    sums = np.zeros((n_rows, n_cols))
    counts = np.zeros((n_rows, n_cols))
    if e.observations:
        try:
            cols = np.array([col[o.variable] for o in e.observations], dtype=np.intp)
        except KeyError as exc:
            raise CorpusError(f"{e.episode_id}: no spec for variable {exc.args[0]!r}") from None
        rows = np.array([o.t_minutes // 60 for o in e.observations], dtype=np.intp)
        np.minimum(rows, n_rows - 1, out=rows)
        vals = np.array([o.value for o in e.observations])
        # add.at is unbuffered: sums accumulate in observation order
        np.add.at(sums, (rows, cols), vals)
        np.add.at(counts, (rows, cols), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        grid = sums / counts
    grid[counts == 0] = MISSING
    return grid


def fill_gaps(grid: np.ndarray) -> np.ndarray:
    """Forward fill each column, then backward fill leading gaps."""
    out = np.array(grid, dtype=np.float64, copy=True)
    n_rows = out.shape[0]
    if n_rows == 0:
        return out
    present = ~np.isnan(out)
    idx = np.where(present, np.arange(n_rows)[:, None], -1)
    np.maximum.accumulate(idx, axis=0, out=idx)
    cols = np.arange(out.shape[1])
    filled = np.where(idx >= 0, out[np.maximum(idx, 0), cols], MISSING)
    # backward fill: the first observed value covers rows before it
    has_any = present.any(axis=0)
    first = np.argmax(present, axis=0)
    lead = (idx < 0) & has_any
    filled[lead] = np.broadcast_to(out[first, cols], out.shape)[lead]
    return filled


def impute_missing_variables(grid: np.ndarray, specs: Sequence[VariableSpec]) -> np.ndarray:
    """Set every wholly missing column to its variable's clinically normal value."""
    if grid.shape[1] != len(specs):
        raise CorpusError(f"grid has {grid.shape[1]} columns but {len(specs)} specs")
    out = np.array(grid, dtype=np.float64, copy=True)
    for j, spec in enumerate(specs):
        column = out[:, j]
        if np.isnan(column).all():
            column[:] = spec.normal
    if np.isnan(out).any():
        raise ValueError("imputation expects fill_gaps to have run first")
    return out


def rescale(grid: np.ndarray, specs: Sequence[VariableSpec]) -> np.ndarray:
    lo = np.array([s.min for s in specs])
    hi = np.array([s.max for s in specs])
    return np.clip((grid - lo) / (hi - lo), 0.0, 1.0)


def label_vector(labels: Iterable[str], vocab: LabelVocabulary) -> np.ndarray:
    index = vocab.index()
    vec = np.zeros(vocab.size)
    for label in labels:
        vec[index[label]] = 1.0
    return vec


def preprocess_episode(e: Episode, specs: Sequence[VariableSpec],
                       vocab: LabelVocabulary) -> GridEpisode:
    grid = resample_hourly(e, specs)
    grid = fill_gaps(grid)
    grid = impute_missing_variables(grid, specs)
    values = rescale(grid, specs)
    return GridEpisode(e.episode_id, values, label_vector(e.labels, vocab))


def preprocess_corpus(episodes: Iterable[Episode], specs: Sequence[VariableSpec],
                      vocab: LabelVocabulary) -> list[GridEpisode]:
    return [preprocess_episode(e, specs, vocab) for e in episodes]


def grid_to_json(g: GridEpisode) -> dict:
    return {
        "episode_id": g.episode_id,
        "values": g.values.tolist(),
        "label_vec": [int(x) for x in g.label_vec],
    }


def grid_from_json(doc: dict, lineno: int | None = None) -> GridEpisode:
    if not isinstance(doc, dict) or set(doc) != {"episode_id", "values", "label_vec"}:
        raise CorpusError("grid record needs exactly episode_id, values, label_vec", lineno)
    try:
        values = np.array(doc["values"], dtype=np.float64)
        label_vec = np.array(doc["label_vec"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"bad grid arrays: {exc}", lineno) from None
    if values.ndim != 2 or values.shape[0] < 1 or label_vec.ndim != 1:
        raise CorpusError("values must be a non-empty T x V matrix, label_vec a vector", lineno)
    if not np.isfinite(values).all():
        raise CorpusError("grid values must be finite", lineno)
    if not np.isin(label_vec, (0.0, 1.0)).all():
        raise CorpusError("label_vec must be binary", lineno)
    return GridEpisode(doc["episode_id"], values, label_vec)


def write_grids(grids: Iterable[GridEpisode], stream: IO[str]) -> None:
    for g in grids:
        stream.write(json.dumps(grid_to_json(g), allow_nan=False))
        stream.write("\n")


def read_grids(stream: IO) -> list[GridEpisode]:
    grids = []
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except ValueError as exc:
            raise CorpusError(f"invalid JSON: {exc}", lineno) from None
        grids.append(grid_from_json(doc, lineno))
    return grids
