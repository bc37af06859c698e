"""Seeded synthetic ICU-style corpus with planted label signals.

Every label owns a slot (variable, direction). An active label shifts its
variable by ``signal_amplitude`` (in [0, 1]-scaled units) up or down inside a
window. Long-range labels use the first quarter of the episode: upward shifts
in the first eighth, downward shifts in the second, so labels sharing a
variable never cancel. Short-range labels do the same inside the final 12
hours (halved into an upward and a downward part). Observation times come
from a per-variable Poisson process plus one anchor observation per window,
so every planted shift is observed at least once unless the variable is
dropped from the episode.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .episode_store import (Episode, LabelVocabulary, Observation, VariableSpec,
                            make_episode)

LONG, SHORT = "long", "short"


@dataclass
class SynthConfig:
    n_episodes: int = 2000
    n_variables: int = 13
    n_labels: int = 32
    label_rate: float = 2.8
    obs_rate_per_hour: float = 0.5
    missing_var_prob: float = 0.03
    long_range_fraction: float = 0.5
    noise_sd: float = 0.05
    signal_amplitude: float = 0.3
    min_hours: float = 12.0
    max_hours: float = 720.0
    seed: int = 0

    def __post_init__(self):
        if self.n_episodes < 0 or self.n_variables < 1 or self.n_labels < 1:
            raise ValueError("counts must be positive")
        if not 0 < self.label_rate < self.n_labels:
            raise ValueError("label_rate must lie in (0, n_labels)")
        for name in ("missing_var_prob", "long_range_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.obs_rate_per_hour <= 0 or self.noise_sd < 0 or self.signal_amplitude <= 0:
            raise ValueError("rates and amplitudes must be positive, noise_sd >= 0")
        if not 12.0 <= self.min_hours <= self.max_hours <= 720.0:
            raise ValueError("need 12 <= min_hours <= max_hours <= 720")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown SynthConfig field(s) {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class PlantedLabel:
    name: str
    kind: str  # LONG or SHORT
    variable: int
    sign: int  # +1 raises, -1 lowers
    incidence: float


@dataclass
class SynthWorld:
    """Corpus-level ground truth shared by every episode."""

    config: SynthConfig
    specs: list[VariableSpec]
    vocab: LabelVocabulary
    labels: list[PlantedLabel]

    def manifest(self) -> dict:
        return {
            "config": asdict(self.config),
            "variables": [asdict(s) for s in self.specs],
            "labels": [asdict(p) for p in self.labels],
        }

    def save_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_manifest(cls, doc: dict) -> "SynthWorld":
        specs = [VariableSpec(**v) for v in doc["variables"]]
        labels = [PlantedLabel(**p) for p in doc["labels"]]
        return cls(SynthConfig.from_dict(doc["config"]), specs,
                   LabelVocabulary(tuple(p.name for p in labels)), labels)

    def long_range_indices(self) -> list[int]:
        return [j for j, p in enumerate(self.labels) if p.kind == LONG]

    def short_range_indices(self) -> list[int]:
        return [j for j, p in enumerate(self.labels) if p.kind == SHORT]


def _calibrate_incidence(n_labels: int, label_rate: float, cap: float = 0.6) -> np.ndarray:
    """Zipf-like incidences p_j = min(cap, c (j+1)^-0.6) summing to label_rate."""
    if label_rate > cap * n_labels:
        cap = 1.0
    weights = (np.arange(n_labels) + 1.0) ** -0.6
    lo, hi = 0.0, cap / weights.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(cap, mid * weights).sum() < label_rate:
            lo = mid
        else:
            hi = mid
    return np.minimum(cap, hi * weights)


def _label_kinds(n_labels: int, fraction: float) -> list[str]:
    # spreads long-range labels evenly through the incidence ordering
    return [LONG if math.floor((j + 1) * fraction + 1e-9) > math.floor(j * fraction + 1e-9)
            else SHORT for j in range(n_labels)]


def build_world(cfg: SynthConfig) -> SynthWorld:
    rng = np.random.default_rng([cfg.seed, 0])
    specs = []
    for v in range(cfg.n_variables):
        lo = round(float(rng.uniform(0.0, 50.0)), 1)
        width = round(float(rng.uniform(20.0, 200.0)), 1)
        normal = round(lo + width * float(rng.uniform(0.4, 0.6)), 2)
        specs.append(VariableSpec(f"var{v:02d}", lo, lo + width, normal))
    incidence = _calibrate_incidence(cfg.n_labels, cfg.label_rate)
    kinds = _label_kinds(cfg.n_labels, cfg.long_range_fraction)
    V = cfg.n_variables
    pools = {}
    for kind in (LONG, SHORT):
        slots = [(v, +1) for v in range(V)] + [(v, -1) for v in range(V)]
        pools[kind] = [slots[s] for s in rng.permutation(len(slots))]
    used = {LONG: 0, SHORT: 0}
    labels = []
    for j in range(cfg.n_labels):
        kind = kinds[j]
        v, sign = pools[kind][used[kind] % (2 * V)]
        used[kind] += 1
        labels.append(PlantedLabel(f"label{j:02d}", kind, int(v), int(sign),
                                   float(incidence[j])))
    vocab = LabelVocabulary(tuple(p.name for p in labels))
    return SynthWorld(cfg, specs, vocab, labels)


def signal_windows(duration: float) -> dict[tuple[str, int], tuple[float, float]]:
    """Half-open minute windows [start, end) for each (kind, direction)."""
    quarter = duration / 4.0
    short_start = max(duration - 720.0, quarter)
    short_mid = 0.5 * (short_start + duration)
    return {
        (LONG, +1): (0.0, quarter / 2.0),
        (LONG, -1): (quarter / 2.0, quarter),
        (SHORT, +1): (short_start, short_mid),
        (SHORT, -1): (short_mid, duration + 1.0),
    }


def _integer_time_in(rng, start: float, end: float) -> int | None:
    lo, hi = math.ceil(start), math.ceil(end) - 1
    if hi < lo:
        return None
    return int(rng.integers(lo, hi + 1))


def generate_episode(world: SynthWorld, index: int) -> Episode:
    cfg = world.config
    rng = np.random.default_rng([cfg.seed, 1, index])
    V = cfg.n_variables
    duration = int(round(rng.uniform(cfg.min_hours, cfg.max_hours) * 60.0))
    active = rng.random(len(world.labels)) < np.array([p.incidence for p in world.labels])
    dropped = rng.random(V) < cfg.missing_var_prob
    offsets = rng.normal(0.0, cfg.noise_sd, size=V) if cfg.noise_sd > 0 else np.zeros(V)
    windows = signal_windows(duration)

    shifts = [[] for _ in range(V)]  # per variable: (start, end, delta)
    for p, on in zip(world.labels, active):
        if on:
            start, end = windows[(p.kind, p.sign)]
            shifts[p.variable].append((start, end, p.sign * cfg.signal_amplitude))

    rate = cfg.obs_rate_per_hour / 60.0
    observations = []
    present = [v for v in range(V) if not dropped[v]]
    closing_var = int(rng.choice(present)) if present else None
    for v in range(V):
        if dropped[v]:
            continue
        n = rng.poisson(rate * (duration + 1))
        times = set(int(t) for t in rng.integers(0, duration + 1, size=n))
        for start, end in windows.values():
            t = _integer_time_in(rng, start, min(end, duration + 1))
            if t is not None:
                times.add(t)
        if v == closing_var:
            times.add(duration)
        times = np.array(sorted(times))
        level = np.full(times.shape, offsets[v])
        for start, end, delta in shifts[v]:
            level[(times >= start) & (times < end)] += delta
        if cfg.noise_sd > 0:
            level = level + rng.normal(0.0, cfg.noise_sd, size=times.shape)
        spec = world.specs[v]
        raw = spec.normal + level * (spec.max - spec.min)
        observations.extend(Observation(int(t), spec.name, float(x))
                            for t, x in zip(times, raw))
    labels = [p.name for p, on in zip(world.labels, active) if on]
    return make_episode(f"ep{index:06d}", observations, labels)


def generate(cfg: SynthConfig) -> tuple[list[Episode], SynthWorld]:
    world = build_world(cfg)
    return [generate_episode(world, i) for i in range(cfg.n_episodes)], world


def window_mean_scores(episodes, world: SynthWorld) -> np.ndarray:
    """Decoder that knows where each label's signal was planted.

    Score for label j is the direction-adjusted shift of its variable inside its
    window, relative to the episode's own level in the unperturbed stretch
    between the first quarter and the final window (the clinical normal when
    that stretch has no observations). Scaled units; 0 when the window is unobserved.
    """
    name_to_v = {s.name: v for v, s in enumerate(world.specs)}
    out = np.zeros((len(episodes), len(world.labels)))
    for i, e in enumerate(episodes):
        windows = signal_windows(e.duration_minutes)
        quiet = (windows[(LONG, -1)][1], windows[(SHORT, +1)][0])
        t = np.array([o.t_minutes for o in e.observations], dtype=np.float64)
        var = np.array([name_to_v[o.variable] for o in e.observations], dtype=np.intp)
        val = np.array([o.value for o in e.observations])
        for j, p in enumerate(world.labels):
            start, end = windows[(p.kind, p.sign)]
            on_var = var == p.variable
            mask = on_var & (t >= start) & (t < end)
            if not mask.any():
                continue
            spec = world.specs[p.variable]
            calm = on_var & (t >= quiet[0]) & (t < quiet[1])
            base = val[calm].mean() if calm.any() else spec.normal
            out[i, j] = p.sign * (val[mask].mean() - base) / (spec.max - spec.min)
    return out
