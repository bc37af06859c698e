"""Episode data model, JSON-Lines corpus I/O, validation and splitting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

MIN_DURATION_MINUTES = 12 * 60
MAX_DURATION_MINUTES = 30 * 24 * 60

_EPISODE_FIELDS = {"episode_id", "observations", "labels"}
_OBSERVATION_FIELDS = {"t_minutes", "variable", "value"}
_SPEC_FIELDS = {"name", "min", "max", "normal"}


class CorpusError(ValueError):
    """Raised for malformed corpus, spec or vocabulary files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, order=True, slots=True)
class Observation:
    t_minutes: int
    variable: str
    value: float


@dataclass(frozen=True)
class Episode:
    episode_id: str
    observations: tuple[Observation, ...]
    labels: frozenset[str] = field(default_factory=frozenset)

    @property
    def duration_minutes(self) -> int:
        """Largest observation timestamp; 0 for an episode without data."""
        if not self.observations:
            return 0
        return max(o.t_minutes for o in self.observations)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    min: float
    max: float
    normal: float

    def __post_init__(self):
        if not (self.min < self.max):
            raise CorpusError(f"variable {self.name!r}: min must be < max")
        if not (self.min <= self.normal <= self.max):
            raise CorpusError(f"variable {self.name!r}: normal outside [min, max]")


@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise CorpusError("vocabulary names must be distinct")

    @property
    def size(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def index(self) -> dict[str, int]:
        return {name: j for j, name in enumerate(self.names)}


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    def to_json(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation),
                "test": list(self.test)}

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSplit":
        return cls(tuple(doc["train"]), tuple(doc["validation"]), tuple(doc["test"]))


def make_episode(episode_id: str, observations: Iterable[Observation],
                 labels: Iterable[str] = ()) -> Episode:
    """Build an Episode with observations sorted by (t_minutes, variable)."""
    obs = sorted(observations, key=lambda o: (o.t_minutes, o.variable))
    return Episode(episode_id, tuple(obs), frozenset(labels))


def _decode_observation(raw, lineno: int) -> Observation:
    if not isinstance(raw, dict):
        raise CorpusError("observation must be an object", lineno)
    unknown = set(raw) - _OBSERVATION_FIELDS
    if unknown:
        raise CorpusError(f"unknown observation field(s) {sorted(unknown)}", lineno)
    missing = _OBSERVATION_FIELDS - set(raw)
    if missing:
        raise CorpusError(f"missing observation field(s) {sorted(missing)}", lineno)
    t = raw["t_minutes"]
    if isinstance(t, bool) or not isinstance(t, int) or t < 0:
        raise CorpusError(f"t_minutes must be a non-negative integer, got {t!r}", lineno)
    if not isinstance(raw["variable"], str):
        raise CorpusError("variable must be a string", lineno)
    value = raw["value"]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CorpusError(f"value must be a number, got {value!r}", lineno)
    if not math.isfinite(value):
        raise CorpusError(f"non-finite value {value!r}", lineno)
    return Observation(t, raw["variable"], float(value))


def _reject_constant(token: str):
    raise ValueError(f"non-finite constant {token}")


def parse_episode_line(line: str, lineno: int = 1) -> Episode:
    try:
        doc = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise CorpusError(f"invalid JSON: {exc}", lineno) from None
    if not isinstance(doc, dict):
        raise CorpusError("episode must be a JSON object", lineno)
    unknown = set(doc) - _EPISODE_FIELDS
    if unknown:
        raise CorpusError(f"unknown field(s) {sorted(unknown)}", lineno)
    missing = _EPISODE_FIELDS - set(doc)
    if missing:
        raise CorpusError(f"missing field(s) {sorted(missing)}", lineno)
    if not isinstance(doc["episode_id"], str):
        raise CorpusError("episode_id must be a string", lineno)
    if not isinstance(doc["observations"], list) or not isinstance(doc["labels"], list):
        raise CorpusError("observations and labels must be arrays", lineno)
    if not all(isinstance(x, str) for x in doc["labels"]):
        raise CorpusError("labels must be strings", lineno)
    obs = [_decode_observation(o, lineno) for o in doc["observations"]]
    return make_episode(doc["episode_id"], obs, doc["labels"])


def parse_corpus(stream: IO) -> list[Episode]:
    """Read a JSON-Lines corpus (text or bytes stream); blank lines are skipped."""
    episodes = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if not line.strip():
            continue
        ep = parse_episode_line(line, lineno)
        if ep.episode_id in seen:
            raise CorpusError(f"duplicate episode_id {ep.episode_id!r}", lineno)
        seen.add(ep.episode_id)
        episodes.append(ep)
    return episodes


def episode_to_json(e: Episode) -> dict:
    return {
        "episode_id": e.episode_id,
        "observations": [
            {"t_minutes": o.t_minutes, "variable": o.variable, "value": o.value}
            for o in e.observations
        ],
        # frozenset has no order; sort so output bytes are reproducible
        "labels": sorted(e.labels),
    }


def serialize_corpus(episodes: Iterable[Episode], stream: IO[str]) -> None:
    for e in episodes:
        stream.write(json.dumps(episode_to_json(e), allow_nan=False))
        stream.write("\n")


def read_corpus(path) -> list[Episode]:
    with open(path, "rb") as fh:
        return parse_corpus(fh)


def write_corpus(episodes: Iterable[Episode], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_corpus(episodes, fh)


def load_specs(path) -> list[VariableSpec]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except ValueError as exc:
            raise CorpusError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, list):
        raise CorpusError(f"{path}: expected a JSON array")
    specs = []
    for item in doc:
        if not isinstance(item, dict) or set(item) != _SPEC_FIELDS:
            raise CorpusError(f"{path}: each spec needs exactly {sorted(_SPEC_FIELDS)}")
        specs.append(VariableSpec(item["name"], float(item["min"]),
                                  float(item["max"]), float(item["normal"])))
    if len({s.name for s in specs}) != len(specs):
        raise CorpusError(f"{path}: duplicate variable names")
    return specs


def save_specs(specs: Sequence[VariableSpec], path) -> None:
    doc = [{"name": s.name, "min": s.min, "max": s.max, "normal": s.normal} for s in specs]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_vocabulary(path) -> LabelVocabulary:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except ValueError as exc:
            raise CorpusError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, list) or not all(isinstance(x, str) for x in doc):
        raise CorpusError(f"{path}: expected a JSON array of strings")
    return LabelVocabulary(tuple(doc))


def save_vocabulary(vocab: LabelVocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(vocab.names), fh, indent=1)
        fh.write("\n")


def validate_episode(e: Episode, specs: Sequence[VariableSpec],
                     vocab: LabelVocabulary) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    violations = []
    duration = e.duration_minutes
    if duration < MIN_DURATION_MINUTES:
        violations.append(f"too short: duration {duration} min < {MIN_DURATION_MINUTES}")
    elif duration > MAX_DURATION_MINUTES:
        violations.append(f"too long: duration {duration} min > {MAX_DURATION_MINUTES}")
    known = {s.name for s in specs}
    unknown_vars = sorted({o.variable for o in e.observations} - known)
    for name in unknown_vars:
        violations.append(f"unknown variable: {name!r}")
    for o in e.observations:
        if not math.isfinite(o.value):
            violations.append(f"non-finite value for {o.variable!r} at t={o.t_minutes}")
        if o.t_minutes < 0:
            violations.append(f"negative timestamp for {o.variable!r}")
    vocab_set = set(vocab.names)
    for label in sorted(e.labels - vocab_set):
        violations.append(f"unknown label: {label!r}")
    return violations


def split_dataset(episodes: Sequence[Episode], seed: int) -> DatasetSplit:
    """Deterministic 80/10/10 split: floor(0.8N) train, floor(0.1N) validation, rest test.

    Ids are sorted before the seeded permutation, so file order does not matter.
    """
    n = len(episodes)
    if n < 10:
        raise ValueError(f"need at least 10 episodes to split, got {n}")
    ids = sorted(e.episode_id for e in episodes)
    if len(set(ids)) != n:
        raise ValueError("episode ids must be unique")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = (8 * n) // 10
    n_val = n // 10
    return DatasetSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + n_val]),
        tuple(shuffled[n_train + n_val:]),
    )


def label_matrix(episodes: Sequence[Episode], vocab: LabelVocabulary) -> np.ndarray:
    """N x L binary matrix; column order follows the vocabulary."""
    index = vocab.index()
    y = np.zeros((len(episodes), vocab.size), dtype=np.float64)
    for i, e in enumerate(episodes):
        for label in e.labels:
            y[i, index[label]] = 1.0
    return y


def label_incidence(episodes: Sequence[Episode], vocab: LabelVocabulary) -> np.ndarray:
    if not episodes:
        return np.zeros(vocab.size)
    return label_matrix(episodes, vocab).mean(axis=0)
