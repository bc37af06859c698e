"""Command-line entry point: synth, preprocess, split, train, baseline, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command writes a run manifest (JSON) next to its main output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, baselines, kernels, lstm_net, metrics, pipeline, synthgen, training
from .episode_store import (CorpusError, DatasetSplit, load_specs, load_vocabulary, read_corpus,
                            save_specs, save_vocabulary, split_dataset, validate_episode,
                            write_corpus)
from .preprocess import read_grids, write_grids

log = logging.getLogger("phenoseq")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODELS = ("base-rate", "linear-raw12", "linear-engineered")
DEFAULT_L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config_paths: list[str] = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)
    tool_version: str = __version__
    backend: str = kernels.BACKEND
    python: str = platform.python_version()
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths) -> dict:
    return {str(p): file_digest(p) for p in paths if p is not None}


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _parse_hidden(text: str) -> list[int]:
    try:
        sizes = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hidden sizes {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("hidden sizes must be positive integers")
    return sizes


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker processes for episode-parallel stages")
    common.add_argument("--manifest", type=Path,
                        help="run manifest path (default: next to the main output)")

    p = _Parser(prog="phenoseq", description="Multilabel phenotyping of clinical time series.")
    p.add_argument("--version", action="version", version=f"phenoseq {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--config", type=Path, help="SynthConfig JSON")
    s.add_argument("--n-episodes", type=int)
    s.add_argument("--out-dir", type=Path, required=True)

    s = sub.add_parser("preprocess", parents=[common], help="episodes -> hourly grids")
    s.add_argument("--corpus", type=Path, required=True)
    s.add_argument("--specs", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("split", parents=[common], help="seeded 80/10/10 split")
    s.add_argument("--data", type=Path, required=True, help="corpus or grid JSONL")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("train", parents=[common], help="train the LSTM")
    s.add_argument("--config", type=Path, help="TrainConfig JSON; flags override it")
    s.add_argument("--data", type=Path, required=True, help="grid JSONL")
    s.add_argument("--split", type=Path, help="split JSON (default: train on everything)")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--hidden", type=_parse_hidden, default=[128, 128])
    s.add_argument("--lr", type=float)
    s.add_argument("--momentum", type=float)
    s.add_argument("--clip", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--truncate", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--patience", type=int)

    s = sub.add_parser("baseline", parents=[common], help="fit a comparison model")
    s.add_argument("--model", choices=MODELS, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--split", type=Path)
    s.add_argument("--l2", type=_parse_floats,
                   help="one value, or a comma list chosen by validation micro AUC")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("evaluate", parents=[common], help="metrics table and report JSON")
    s.add_argument("--scores", type=Path, help="score matrix JSON")
    s.add_argument("--truth", type=Path, help="truth matrix JSON")
    s.add_argument("--checkpoint", type=Path, action="append", default=[],
                   help="model checkpoint; repeat to compare several models")
    s.add_argument("--data", type=Path, help="grid JSONL scored by --checkpoint")
    s.add_argument("--split", type=Path)
    s.add_argument("--subset", choices=("train", "validation", "test"), default="test")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out", type=Path, required=True, help="report JSON")
    s.add_argument("--scores-out", type=Path, help="also write the score matrix here")
    return p


# ---------------------------------------------------------------- commands

def cmd_synth(args, man: RunManifest) -> Path:
    doc = _load_json(args.config) if args.config else {}
    if args.config:
        man.config_paths.append(str(args.config))
    doc["seed"] = args.seed
    if args.n_episodes is not None:
        doc["n_episodes"] = args.n_episodes
    try:
        cfg = synthgen.SynthConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad synth config: {exc}") from exc
    man.seeds["synth"] = cfg.seed
    world = synthgen.build_world(cfg)
    episodes = pipeline.parallel_map(synthgen.generate_episode,
                                     [(world, i) for i in range(cfg.n_episodes)], args.threads)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(episodes, out / "corpus.jsonl")
    save_specs(world.specs, out / "specs.json")
    save_vocabulary(world.vocab, out / "vocab.json")
    world.save_manifest(out / "world.json")
    man.outputs = _digests(out / n for n in ("corpus.jsonl", "specs.json", "vocab.json",
                                             "world.json"))
    log.info("wrote %d episodes to %s", len(episodes), out)
    return out / "run_manifest.json"


def cmd_preprocess(args, man: RunManifest) -> Path:
    episodes, specs, vocab = _read_corpus(args.corpus), _specs(args.specs), _vocab(args.vocab)
    man.inputs = _digests([args.corpus, args.specs, args.vocab])
    problems = []
    for e in episodes:
        problems.extend(f"{e.episode_id}: {msg}" for msg in validate_episode(e, specs, vocab))
    if problems:
        raise DataError("invalid episodes:\n  " + "\n  ".join(problems[:20]))
    grids = pipeline.parallel_preprocess(episodes, specs, vocab, args.threads)
    with open(args.out, "w", encoding="utf-8") as fh:
        write_grids(grids, fh)
    man.outputs = _digests([args.out])
    log.info("wrote %d grids to %s", len(grids), args.out)
    return args.out


def cmd_split(args, man: RunManifest) -> Path:
    ids = _episode_ids(args.data)
    man.inputs = _digests([args.data])
    man.seeds["split"] = args.seed

    class _Id:
        def __init__(self, episode_id):
            self.episode_id = episode_id

    try:
        split = split_dataset([_Id(i) for i in ids], args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    _write_json(args.out, split.to_json())
    man.outputs = _digests([args.out])
    log.info("split %d episodes: %d/%d/%d", len(ids), len(split.train),
             len(split.validation), len(split.test))
    return args.out


def _train_config(args, man: RunManifest) -> training.TrainConfig:
    doc = {}
    if args.config:
        doc = _load_json(args.config)
        man.config_paths.append(str(args.config))
        if not isinstance(doc, dict):
            raise DataError(f"{args.config}: expected a JSON object")
    overrides = {"learning_rate": args.lr, "momentum": args.momentum, "clip_norm": args.clip,
                 "weight_decay": args.weight_decay, "truncate_k": args.truncate,
                 "max_epochs": args.epochs, "patience": args.patience}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["seed"] = args.seed
    try:
        return training.TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad training config: {exc}") from exc


def cmd_train(args, man: RunManifest) -> Path:
    cfg = _train_config(args, man)
    man.seeds["train"] = cfg.seed
    train_set, val_set, _ = _subsets(args.data, args.split, man)
    params, history = training.train(train_set, val_set, args.hidden, cfg)
    lstm_net.save_params(params, args.out, seed=cfg.seed)
    hist_path = args.out.with_suffix(".history.json")
    _write_json(hist_path, {"config": cfg.to_dict(), "hidden_sizes": args.hidden,
                            "history": history.to_dict()})
    man.outputs = _digests([args.out, hist_path])
    return args.out


def cmd_baseline(args, man: RunManifest) -> Path:
    train_set, val_set, _ = _subsets(args.data, args.split, man)
    man.seeds["baseline"] = args.seed
    if args.model == "base-rate":
        model = baselines.fit_base_rate(train_set)
        _write_json(args.out, base_rate_to_json(model))
    else:
        schema = args.model.removeprefix("linear-")
        X = baselines.feature_matrix(train_set, schema)
        Y = np.array([g.label_vec for g in train_set])
        grid = args.l2 or list(DEFAULT_L2_GRID)
        if len(grid) == 1 or not val_set:
            model = baselines.fit_logistic(X, Y, grid[0], seed=args.seed, schema=schema)
        else:
            model, scores = baselines.select_l2(
                X, Y, baselines.feature_matrix(val_set, schema),
                np.array([g.label_vec for g in val_set]), grid, schema=schema, seed=args.seed)
            log.info("validation micro AUC by l2: %s", scores)
        model.save(args.out)
    man.outputs = _digests([args.out])
    return args.out


def cmd_evaluate(args, man: RunManifest) -> Path:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    reports, score_docs = [], []
    if args.scores or args.truth:
        if not (args.scores and args.truth) or args.checkpoint:
            raise UsageError("use --scores with --truth, or --checkpoint with --data")
        sdoc, tdoc = _load_json(args.scores), _load_json(args.truth)
        man.inputs = _digests([args.scores, args.truth])
        scores, truth, labels = _score_truth(sdoc, tdoc)
        reports.append(_report(scores, truth, labels, args, sdoc.get("model", args.scores.stem)))
    else:
        if not args.checkpoint or not args.data:
            raise UsageError("use --scores with --truth, or --checkpoint with --data")
        subsets = _subsets(args.data, args.split, man)
        grids = subsets[("train", "validation", "test").index(args.subset)] if args.split \
            else subsets[0]
        truth = np.array([g.label_vec for g in grids])
        ids = [g.episode_id for g in grids]
        for path in args.checkpoint:
            man.inputs.update(_digests([path]))
            name, scores = score_with_checkpoint(_load_json(path), grids, path)
            reports.append(_report(scores, truth, None, args, name))
            score_docs.append({"model": name, "episode_ids": ids, "scores": scores.tolist()})
    print(metrics.format_table(reports))
    doc = reports[0].to_dict() if len(reports) == 1 else {"reports": [r.to_dict() for r in reports]}
    _write_json(args.out, doc)
    outputs = [args.out]
    if args.scores_out and score_docs:
        _write_json(args.scores_out, score_docs[0] if len(score_docs) == 1 else score_docs)
        outputs.append(args.scores_out)
    man.outputs = _digests(outputs)
    return args.out


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "split": cmd_split,
            "train": cmd_train, "baseline": cmd_baseline, "evaluate": cmd_evaluate}


# ---------------------------------------------------------------- helpers

def base_rate_to_json(model: baselines.BaseRateModel) -> dict:
    return {"manifest": {"format": "phenoseq-base-rate", "version": 1},
            "incidence": model.incidence.tolist()}


def score_with_checkpoint(doc: dict, grids, path) -> tuple[str, np.ndarray]:
    try:
        fmt = doc["manifest"]["format"]
        if fmt == "phenoseq-lstm":
            return "LSTM", training.predict_all(lstm_net.params_from_json(doc), grids)
        if fmt == "phenoseq-linear":
            model = baselines.LinearModel.from_json(doc)
            X = baselines.feature_matrix(grids, model.schema)
            return f"Logistic regression ({model.schema})", baselines.predict_linear(model, X)
        if fmt == "phenoseq-base-rate":
            model = baselines.BaseRateModel(np.array(doc["incidence"], dtype=np.float64))
            return "Base rate", model.predict(len(grids))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    raise DataError(f"{path}: unknown checkpoint format {fmt!r}")


def _report(scores, truth, labels, args, name) -> metrics.MetricsReport:
    try:
        return metrics.build_report(scores, truth, labels, k=args.k, threshold=args.threshold,
                                    model=name)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _matrix(doc, key, path_hint):
    if isinstance(doc, list):
        return np.array(doc, dtype=np.float64)
    if isinstance(doc, dict) and key in doc:
        return np.array(doc[key], dtype=np.float64)
    raise DataError(f"{path_hint}: expected a list of rows or an object with {key!r}")


def _score_truth(sdoc, tdoc):
    try:
        scores = _matrix(sdoc, "scores", "scores")
        truth = _matrix(tdoc, "truth", "truth")
    except ValueError as exc:  # ragged rows
        raise DataError(f"malformed matrix: {exc}") from exc
    if scores.ndim != 2 or scores.shape != truth.shape:
        raise DataError(f"score and truth shapes differ: {scores.shape} vs {truth.shape}")
    if isinstance(sdoc, dict) and isinstance(tdoc, dict):
        s_ids, t_ids = sdoc.get("episode_ids"), tdoc.get("episode_ids")
        if s_ids is not None and t_ids is not None and list(s_ids) != list(t_ids):
            raise DataError("score and truth episode ids differ")
    labels = tdoc.get("labels") if isinstance(tdoc, dict) else None
    return scores, truth, labels


def _read_corpus(path):
    try:
        return read_corpus(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _specs(path):
    try:
        return load_specs(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _vocab(path):
    try:
        return load_vocabulary(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _read_grids(path):
    try:
        with open(path, encoding="utf-8") as fh:
            grids = read_grids(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not grids:
        raise DataError(f"{path}: no episodes")
    return grids


def _episode_ids(path) -> list[str]:
    ids = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    ids.append(json.loads(line)["episode_id"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorpusError(f"no episode_id ({exc})", lineno) from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate episode ids")
    return ids


def _subsets(data_path, split_path, man: RunManifest):
    grids = _read_grids(data_path)
    man.inputs.update(_digests([data_path, split_path]))
    if split_path is None:
        return grids, [], []
    try:
        split = DatasetSplit.from_json(_load_json(split_path))
    except (KeyError, TypeError) as exc:
        raise DataError(f"{split_path}: not a split file ({exc})") from exc
    by_id = {g.episode_id: g for g in grids}
    try:
        return tuple([by_id[i] for i in part]
                     for part in (split.train, split.validation, split.test))
    except KeyError as exc:
        raise DataError(f"split names episode {exc} missing from {data_path}") from None


def _setup_logging() -> None:
    level = os.environ.get("PHENOSEQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        man = RunManifest(command=args.command, argv=argv)
        start = time.perf_counter()
        main_output = COMMANDS[args.command](args, man)
        man.wall_time_s = round(time.perf_counter() - start, 3)
        path = args.manifest or Path(f"{main_output}.manifest.json")
        if args.command == "synth" and args.manifest is None:
            path = main_output
        path.write_text(man.to_json() + "\n", encoding="utf-8")
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except training.NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:  # includes CorpusError
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
