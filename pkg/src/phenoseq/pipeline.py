"""Glue shared by the CLI and the end-to-end tests: corpus -> split -> grids."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import starmap
from typing import Callable, Sequence

from .episode_store import DatasetSplit, Episode, LabelVocabulary, VariableSpec, split_dataset
from .preprocess import GridEpisode, preprocess_corpus, preprocess_episode
from .synthgen import SynthConfig, SynthWorld, generate


@dataclass
class PreparedData:
    train: list[GridEpisode]
    validation: list[GridEpisode]
    test: list[GridEpisode]
    split: DatasetSplit


def split_grids(episodes: Sequence[Episode], specs: Sequence[VariableSpec],
                vocab: LabelVocabulary, split_seed: int = 0) -> PreparedData:
    split = split_dataset(episodes, split_seed)
    by_id = {e.episode_id: e for e in episodes}

    def grids(ids):
        return preprocess_corpus((by_id[i] for i in ids), specs, vocab)

    return PreparedData(grids(split.train), grids(split.validation), grids(split.test), split)


def synthetic_data(cfg: SynthConfig, split_seed: int = 0) -> tuple[PreparedData, SynthWorld]:
    episodes, world = generate(cfg)
    return split_grids(episodes, world.specs, world.vocab, split_seed), world


def parallel_map(fn: Callable, arg_tuples: Sequence[tuple], threads: int = 1) -> list:
    """``[fn(*args) for args in arg_tuples]``, spread over worker processes.

    Output order always follows input order, so results do not depend on ``threads``.
    """
    arg_tuples = list(arg_tuples)
    if threads <= 1 or len(arg_tuples) < 2:
        return list(starmap(fn, arg_tuples))
    chunk = max(1, len(arg_tuples) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*arg_tuples), chunksize=chunk))


def parallel_preprocess(episodes: Sequence[Episode], specs: Sequence[VariableSpec],
                        vocab: LabelVocabulary, threads: int = 1) -> list[GridEpisode]:
    return parallel_map(preprocess_episode, [(e, specs, vocab) for e in episodes], threads)
