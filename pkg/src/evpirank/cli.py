"""Command-line entry point wiring the pipeline stages together.

Subcommands: ingest, candidates, train, rank, evaluate, significance,
gradcheck. Exit codes: 0 success, 1 runtime failure, 2 usage error. Every
command logs its fully resolved configuration to stderr, and re-running a
command with the same inputs, config and seed reproduces its outputs byte
for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import baselines, evaluation, evpi, ingest, retrieval
from .config import Config, ConfigError
from .embeddings import EmbeddingTable, load_embeddings_file
from .gradsuite import GRAD_TOLERANCE, run_gradient_suite
from .neural import load_checkpoint, save_checkpoint
from .training import TrainingDivergedError

MODEL_NAMES = ("random", "ngrams", "cqa", "neural-pq", "neural-pa", "neural-pqa", "evpi")
SPLIT_NAMES = ("train", "tune", "test", "all")


class UsageError(Exception):
    """Bad invocation: unknown names, missing files, malformed flags."""


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return p


def _load_config(args) -> Config:
    config = Config.from_file(_require_file(args.config, "config")) if args.config else Config()
    for assignment in args.set or []:
        config.set_override(assignment)
    if args.seed is not None:
        config.values["seed"] = args.seed
    _log(config.resolved_json())
    return config


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("EVPIRANK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"EVPIRANK_THREADS must be an integer, got {env!r}")
    return 1


def _load_table(path: str | None) -> EmbeddingTable:
    if path is None:
        return EmbeddingTable.empty()
    return load_embeddings_file(_require_file(path, "embeddings"))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    parser.add_argument("--seed", type=int, default=None, help="root random seed")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (fallback: EVPIRANK_THREADS)")


def cmd_ingest(args) -> int:
    config = _load_config(args)
    del config  # ingest has no tunables; logged for reproducibility anyway
    posts, bad_posts = ingest.read_posts(_require_file(args.posts, "posts"))
    comments, bad_comments = ingest.read_comments(_require_file(args.comments, "comments"))
    edits, bad_edits = ingest.read_edits(_require_file(args.history, "history"))
    table = _load_table(args.embeddings)
    diagnostics = ingest.IngestDiagnostics(
        malformed_lines={"posts": bad_posts, "comments": bad_comments, "history": bad_edits}
    )
    triples, diagnostics = ingest.build_triples(
        posts, comments, edits, table=table, diagnostics=diagnostics
    )
    ingest.write_triples(args.out, triples)
    _log(diagnostics.to_json())
    return 0


def cmd_candidates(args) -> int:
    config = _load_config(args)
    del config
    triples = ingest.read_triples(_require_file(args.triples, "triples"))
    if not triples:
        Path(args.out).write_text("", encoding="utf-8")
        _log(json.dumps({"candidate_sets": 0, "warning": "no triples in input"}))
        return 0
    by_post = {t.post.post_id: t for t in triples}
    if len(by_post) != len(triples):
        raise UsageError("triples file contains duplicate post ids")
    docs = [
        (post_id, retrieval.doc_text(t.post.title, t.post.body))
        for post_id, t in sorted(by_post.items())
    ]
    index = retrieval.build_index(docs)
    if args.index_out:
        retrieval.save_index(index, args.index_out)
    post_ids = sorted(by_post)
    n_threads = _threads(args)

    def one(post_id: str) -> retrieval.CandidateSet:
        return retrieval.generate_candidates(index, by_post, post_id, k=args.k)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            sets = list(pool.map(one, post_ids))
    else:
        sets = [one(post_id) for post_id in post_ids]
    retrieval.write_candidates(args.out, sets)
    if len(by_post) < args.k:
        _log(
            json.dumps(
                {
                    "warning": f"corpus has {len(by_post)} posts; candidate sets "
                    f"are smaller than k={args.k}"
                }
            )
        )
    _log(json.dumps({"candidate_sets": len(sets), "k": args.k}))
    return 0


def _check_model_name(name: str) -> None:
    if name not in MODEL_NAMES:
        raise UsageError(f"unknown model {name!r}; valid models: {', '.join(MODEL_NAMES)}")


def _split_sets(candidate_sets, split: str):
    if split == "all":
        return list(candidate_sets)
    buckets = {"train": range(0, 8), "tune": range(8, 9), "test": range(9, 10)}[split]
    return [cs for cs in candidate_sets if ingest.split_bucket(cs.post_id) in buckets]


def cmd_train(args) -> int:
    _check_model_name(args.model)
    if args.model == "random":
        raise UsageError("model 'random' has no parameters to train")
    config = _load_config(args)
    candidate_sets = retrieval.read_candidates(_require_file(args.candidates, "candidates"))
    table = _load_table(args.embeddings)
    if args.no_split:
        train_sets = tune_sets = candidate_sets
    else:
        train_sets = _split_sets(candidate_sets, "train")
        tune_sets = _split_sets(candidate_sets, "tune")
    if not train_sets or not tune_sets:
        raise UsageError(
            "empty train or tune split; use --no-split for corpora too small to split"
        )

    log_entries = []
    if args.model == "evpi":
        model, result = evpi.train(train_sets, tune_sets, table, config.train_config())
        tensors = model.tensors()
        log_entries = result.log
    elif args.model.startswith("neural-"):
        variant = args.model.removeprefix("neural-")
        model, result = baselines.neural_baseline_train(
            variant, train_sets, tune_sets, table, config.train_config()
        )
        tensors = model.tensors()
        log_entries = result.log
    elif args.model == "ngrams":
        examples = baselines.build_labeled_examples(train_sets)
        weights = baselines.ngram_train(
            examples, epochs=config.get("epochs"), lr=config.get("lr")
        )
        tensors = baselines.NgramModel(weights).tensors()
    else:  # cqa
        examples = baselines.build_labeled_examples(train_sets)
        model = baselines.cqa_train(
            examples, table, epochs=config.get("epochs"), lr=config.get("lr")
        )
        tensors = model.tensors()
    save_checkpoint(args.out, tensors)
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as handle:
            for entry in log_entries:
                handle.write(
                    json.dumps(
                        {
                            "epoch": entry.epoch,
                            "train_loss": entry.train_loss,
                            "tune_map": entry.tune_map,
                        }
                    )
                    + "\n"
                )
    _log(json.dumps({"model": args.model, "checkpoint": args.out, "epochs_run": len(log_entries)}))
    return 0


def _ranker(model_name: str, checkpoint: str | None, table: EmbeddingTable, config: Config):
    """Build a rank(cs) callable for the requested model."""
    if model_name == "random":
        seed = config.get("seed")
        return lambda cs: baselines.random_rankings([cs], seed=seed)[0]
    if checkpoint is None:
        raise UsageError(f"model {model_name!r} requires --checkpoint")
    tensors = load_checkpoint(_require_file(checkpoint, "checkpoint"))
    if model_name == "evpi":
        params = evpi.EvpiParams.from_tensors(tensors)
        model = evpi.EvpiModel(params, table, config.get("clamp_negative_sim"))
        return model.rank
    if model_name.startswith("neural-"):
        variant = model_name.removeprefix("neural-")
        params = baselines.NeuralBaselineParams.from_tensors(variant, tensors)
        return baselines.NeuralBaselineModel(params, table).rank
    if model_name == "ngrams":
        return baselines.NgramModel.from_tensors(tensors).rank
    model = baselines.CqaModel.from_tensors(tensors)
    return lambda cs: model.rank(cs, table)


def cmd_rank(args) -> int:
    _check_model_name(args.model)
    config = _load_config(args)
    candidate_sets = retrieval.read_candidates(_require_file(args.candidates, "candidates"))
    selected = _split_sets(candidate_sets, args.split)
    if not selected:
        raise UsageError(f"no posts in split {args.split!r}")
    table = _load_table(args.embeddings)
    rank = _ranker(args.model, args.checkpoint, table, config)
    ranked = [rank(cs) for cs in sorted(selected, key=lambda cs: cs.post_id)]
    evpi.write_rankings(args.out, args.model, ranked)
    _log(json.dumps({"model": args.model, "ranked_posts": len(ranked), "split": args.split}))
    return 0


def _check_mode(mode: str) -> None:
    if mode not in evaluation.MODES:
        raise UsageError(f"unknown mode {mode!r}; valid modes: {', '.join(evaluation.MODES)}")


def cmd_evaluate(args) -> int:
    _check_mode(args.mode)
    config = _load_config(args)
    del config
    rankings = evpi.read_rankings(_require_file(args.rankings, "rankings"))
    candidate_sets = retrieval.read_candidates(_require_file(args.candidates, "candidates"))
    annotations = None
    if args.annotations:
        annotations = evaluation.read_annotations(_require_file(args.annotations, "annotations"))
    elif args.mode != "original":
        raise UsageError(f"mode {args.mode!r} requires --annotations")
    ranked_ids = {rl.post_id for rl in rankings}
    candidate_sets = [cs for cs in candidate_sets if cs.post_id in ranked_ids]
    report = evaluation.evaluate(
        rankings, annotations, candidate_sets, args.mode, args.exclude_base
    )
    model_name = args.model or "-"
    payload = report.to_dict(model=model_name, mode=args.mode)
    text = json.dumps(payload, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    print(report.format_table(model=model_name, mode=args.mode))
    if args.valid_histogram:
        if annotations is None:
            raise UsageError("--valid-histogram requires --annotations")
        histogram = evaluation.valid_intersection_histogram(annotations)
        print(json.dumps({"valid_intersection_histogram": histogram}))
    return 0


def cmd_significance(args) -> int:
    _check_mode(args.mode)
    config = _load_config(args)
    rankings_a = evpi.read_rankings(_require_file(args.rankings_a, "rankings-a"))
    rankings_b = evpi.read_rankings(_require_file(args.rankings_b, "rankings-b"))
    candidate_sets = retrieval.read_candidates(_require_file(args.candidates, "candidates"))
    annotations = None
    if args.annotations:
        annotations = evaluation.read_annotations(_require_file(args.annotations, "annotations"))
    elif args.mode != "original":
        raise UsageError(f"mode {args.mode!r} requires --annotations")
    common = {rl.post_id for rl in rankings_a} & {rl.post_id for rl in rankings_b}
    candidate_sets = [cs for cs in candidate_sets if cs.post_id in common]
    labelsets = evaluation.build_labelsets(
        annotations, candidate_sets, args.mode, args.exclude_base
    )
    metric_key = "ap" if args.metric == "map" else args.metric
    per_a = evaluation.per_post_metrics(rankings_a, labelsets, candidate_sets, args.mode)
    per_b = evaluation.per_post_metrics(rankings_b, labelsets, candidate_sets, args.mode)
    post_ids = sorted(per_a)
    scores_a = [per_a[p][metric_key] for p in post_ids]
    scores_b = [per_b[p][metric_key] for p in post_ids]
    p_value = evaluation.bootstrap_test(scores_a, scores_b, n=args.n, seed=config.get("seed"))
    result = {
        "metric": args.metric,
        "mode": args.mode,
        "n_posts": len(post_ids),
        "mean_a": sum(scores_a) / len(scores_a),
        "mean_b": sum(scores_b) / len(scores_b),
        "p_value": p_value,
    }
    print(json.dumps(result, ensure_ascii=False))
    return 0


def cmd_gradcheck(args) -> int:
    config = _load_config(args)
    results = run_gradient_suite(seed=config.get("seed"), draws=args.draws)
    failed = 0
    for result in results:
        status = "PASS" if result.passed(args.threshold) else "FAIL"
        if status == "FAIL":
            failed += 1
        print(f"{status} {result.name} max_rel_error={result.max_rel_error:.3e}")
    if failed:
        _log(f"{failed} gradient checks exceeded {args.threshold}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evpirank",
        description="Rank clarification questions by expected value of perfect information.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="extract (post, question, answer) triples from dump files")
    p.add_argument("--posts", required=True)
    p.add_argument("--comments", required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", help="word vectors for the edit-vs-comment similarity choice")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("candidates", help="build the TF-IDF index and candidate sets")
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--index-out", help="also persist the index to this path")
    _add_common(p)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("train", help="train a ranking model")
    p.add_argument("--candidates", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="write per-epoch loss and tune MAP to this file")
    p.add_argument(
        "--no-split",
        action="store_true",
        help="train and tune on every post instead of the hash-based splits",
    )
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="rank candidate questions with a trained model")
    p.add_argument("--candidates", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=SPLIT_NAMES, default="all")
    _add_common(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", help="score rankings against a label regime")
    p.add_argument("--rankings", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--annotations")
    p.add_argument("--mode", required=True)
    p.add_argument("--exclude-base", choices=evaluation.EXCLUDE_BASES, default="best_union")
    p.add_argument("--model", help="model name for the report")
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--valid-histogram", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("significance", help="paired bootstrap test between two rankings files")
    p.add_argument("--rankings-a", required=True)
    p.add_argument("--rankings-b", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--annotations")
    p.add_argument("--mode", required=True)
    p.add_argument("--exclude-base", choices=evaluation.EXCLUDE_BASES, default="best_union")
    p.add_argument("--metric", choices=("p_at_1", "p_at_3", "p_at_5", "map"), default="map")
    p.add_argument("--n", type=int, default=10000)
    _add_common(p)
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--draws", type=int, default=10)
    p.add_argument("--threshold", type=float, default=GRAD_TOLERANCE)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        _log(f"error: {exc}")
        return 2
    except TrainingDivergedError as exc:
        _log(f"training diverged: {exc}")
        return 1
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
