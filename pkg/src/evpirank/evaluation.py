"""Ranking metrics, label regimes, agreement, and significance testing.

Rankings are scored with precision at k and mean average precision against
one of four label regimes: the union of the two annotators' best picks, the
intersection of their valid sets, the original question alone, or the
annotation labels restricted to the nine non-original candidates.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evpi import RankedList
from .retrieval import CandidateSet
from .rng import substream

MODES = ("best_union", "valid_intersection", "original", "exclude_original")
EXCLUDE_BASES = ("best_union", "valid_intersection")


class EvaluationError(ValueError):
    pass


@dataclass
class Annotation:
    """One expert's labels for a post: a single best pick and a valid set."""

    post_id: str
    annotator_id: str
    best: int
    valid: set[int]

    def __post_init__(self):
        if self.best not in self.valid:
            raise EvaluationError(
                f"post {self.post_id}: best candidate {self.best} must be marked valid"
            )
        for idx in self.valid:
            if not 0 <= idx <= 9:
                raise EvaluationError(f"post {self.post_id}: candidate index {idx} out of range")


@dataclass
class LabelSet:
    post_id: str
    relevant: set[int]
    mode: str


@dataclass
class MetricReport:
    p_at_1: float
    p_at_3: float
    p_at_5: float
    map: float
    n_posts: int

    def to_dict(self, model: str = "", mode: str = "") -> dict:
        out = {}
        if model:
            out["model"] = model
        if mode:
            out["mode"] = mode
        out.update(
            {
                "n_posts": self.n_posts,
                "p_at_1": self.p_at_1,
                "p_at_3": self.p_at_3,
                "p_at_5": self.p_at_5,
                "map": self.map,
            }
        )
        return out

    def format_table(self, model: str = "", mode: str = "") -> str:
        header = f"{'model':<14} {'mode':<20} {'n':>5} {'p@1':>7} {'p@3':>7} {'p@5':>7} {'MAP':>7}"
        row = (
            f"{model or '-':<14} {mode or '-':<20} {self.n_posts:>5} "
            f"{self.p_at_1:>7.4f} {self.p_at_3:>7.4f} {self.p_at_5:>7.4f} {self.map:>7.4f}"
        )
        return header + "\n" + row


def precision_at_k(order: Sequence[int], relevant: set[int], k: int) -> float:
    """Fraction of the top-k ranked candidates that are relevant."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    return len(set(order[:k]) & relevant) / k


def average_precision(order: Sequence[int], relevant: set[int]) -> float:
    """Average of precision at each rank holding a relevant candidate."""
    if not relevant:
        raise EvaluationError("relevant set is empty")
    hits = 0
    total = 0.0
    for rank, candidate in enumerate(order, start=1):
        if candidate in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(
    orders: Sequence[Sequence[int]], relevants: Sequence[set[int]]
) -> float:
    """Mean AP over posts; posts with no relevant labels are skipped."""
    if len(orders) != len(relevants):
        raise EvaluationError("orders and label sets must align")
    values = []
    skipped = 0
    for order, relevant in zip(orders, relevants):
        if not relevant:
            skipped += 1
            continue
        values.append(average_precision(order, relevant))
    if skipped:
        warnings.warn(f"skipped {skipped} posts with empty relevant sets", stacklevel=2)
    if not values:
        raise EvaluationError("no posts with relevant labels")
    return float(np.mean(values))


def _annotation_pairs(
    annotations: Iterable[Annotation],
) -> dict[str, tuple[Annotation, Annotation]]:
    grouped: dict[str, list[Annotation]] = {}
    for ann in annotations:
        grouped.setdefault(ann.post_id, []).append(ann)
    pairs = {}
    for post_id, anns in grouped.items():
        if len(anns) != 2:
            raise EvaluationError(
                f"post {post_id}: expected exactly two annotators, got {len(anns)}"
            )
        pairs[post_id] = (anns[0], anns[1])
    return pairs


def build_labelsets(
    annotations: Iterable[Annotation] | None,
    candidate_sets: Sequence[CandidateSet],
    mode: str,
    exclude_base: str = "best_union",
) -> list[LabelSet]:
    """Relevant-candidate sets per post for the requested regime.

    best_union takes the union of the two best picks; valid_intersection the
    intersection of the valid sets (posts with an empty intersection are
    dropped with a warning). original marks only the post's own question.
    exclude_original removes the original index from the exclude_base labels
    and evaluates over the nine remaining candidates; posts left with no
    labels are dropped with a warning.
    """
    if mode not in MODES:
        raise EvaluationError(f"unknown mode {mode!r}; valid modes: {', '.join(MODES)}")
    by_post = {cs.post_id: cs for cs in candidate_sets}
    if mode == "original":
        return [
            LabelSet(post_id=cs.post_id, relevant={cs.original_index}, mode=mode)
            for cs in candidate_sets
        ]
    if annotations is None:
        raise EvaluationError(f"mode {mode!r} requires annotations")
    if mode == "exclude_original" and exclude_base not in EXCLUDE_BASES:
        raise EvaluationError(
            f"unknown exclude base {exclude_base!r}; valid: {', '.join(EXCLUDE_BASES)}"
        )
    pairs = _annotation_pairs(annotations)
    labelsets = []
    dropped = 0
    for post_id in sorted(pairs):
        if post_id not in by_post:
            raise EvaluationError(f"annotations reference unknown post {post_id!r}")
        first, second = pairs[post_id]
        if mode == "best_union":
            relevant = {first.best, second.best}
        elif mode == "valid_intersection":
            relevant = first.valid & second.valid
        else:  # exclude_original
            if exclude_base == "best_union":
                relevant = {first.best, second.best}
            else:
                relevant = first.valid & second.valid
            relevant = relevant - {by_post[post_id].original_index}
        if not relevant:
            dropped += 1
            continue
        labelsets.append(LabelSet(post_id=post_id, relevant=relevant, mode=mode))
    if dropped:
        warnings.warn(f"dropped {dropped} posts with no relevant labels", stacklevel=2)
    return labelsets


def cohen_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Chance-corrected agreement between two categorical label sequences."""
    if len(labels_a) != len(labels_b):
        raise EvaluationError("label sequences must have equal length")
    if not labels_a:
        raise EvaluationError("label sequences are empty")
    n = len(labels_a)
    observed = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    categories = set(labels_a) | set(labels_b)
    expected = 0.0
    for cat in categories:
        pa = sum(1 for a in labels_a if a == cat) / n
        pb = sum(1 for b in labels_b if b == cat) / n
        expected += pa * pb
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


def bootstrap_test(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    n: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided paired bootstrap p-value over per-post scores.

    Posts are resampled with replacement; the p-value is twice the fraction
    of resamples whose mean difference contradicts the observed direction,
    capped at 1. Identical inputs give p = 1.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("score lists must be 1-d and equally long")
    if a.size < 2:
        raise EvaluationError("need at least two paired scores")
    diff = a - b
    observed = float(diff.mean())
    if observed == 0.0:
        return 1.0
    rng = substream(seed, "bootstrap")
    sign = 1.0 if observed > 0 else -1.0
    contradictions = 0
    chunk = 1000
    done = 0
    while done < n:
        m = min(chunk, n - done)
        idx = rng.integers(0, a.size, size=(m, a.size))
        resampled = diff[idx].mean(axis=1)
        contradictions += int(np.count_nonzero(resampled * sign <= 0.0))
        done += m
    return min(1.0, 2.0 * contradictions / n)


def _mode_order(ranked: RankedList, cs: CandidateSet, mode: str) -> list[int]:
    if mode == "exclude_original":
        return [idx for idx in ranked.order if idx != cs.original_index]
    return list(ranked.order)


def per_post_metrics(
    rankings: Sequence[RankedList],
    labelsets: Sequence[LabelSet],
    candidate_sets: Sequence[CandidateSet],
    mode: str,
) -> dict[str, dict[str, float]]:
    """p@1/3/5 and AP per labeled post; missing rankings are an error."""
    ranked_by_post = {rl.post_id: rl for rl in rankings}
    cs_by_post = {cs.post_id: cs for cs in candidate_sets}
    out: dict[str, dict[str, float]] = {}
    for labelset in sorted(labelsets, key=lambda ls: ls.post_id):
        ranked = ranked_by_post.get(labelset.post_id)
        if ranked is None:
            raise EvaluationError(f"no ranking for labeled post {labelset.post_id!r}")
        cs = cs_by_post.get(labelset.post_id)
        if cs is None:
            raise EvaluationError(f"no candidate set for post {labelset.post_id!r}")
        order = _mode_order(ranked, cs, mode)
        out[labelset.post_id] = {
            "p_at_1": precision_at_k(order, labelset.relevant, 1),
            "p_at_3": precision_at_k(order, labelset.relevant, 3),
            "p_at_5": precision_at_k(order, labelset.relevant, 5),
            "ap": average_precision(order, labelset.relevant),
        }
    return out


def evaluate(
    rankings: Sequence[RankedList],
    annotations: Iterable[Annotation] | None,
    candidate_sets: Sequence[CandidateSet],
    mode: str,
    exclude_base: str = "best_union",
) -> MetricReport:
    """Aggregate p@k (k = 1, 3, 5) and MAP over the labeled posts."""
    labelsets = build_labelsets(annotations, candidate_sets, mode, exclude_base)
    per_post = per_post_metrics(rankings, labelsets, candidate_sets, mode)
    if not per_post:
        raise EvaluationError("no posts to evaluate")
    values = list(per_post.values())
    return MetricReport(
        p_at_1=float(np.mean([v["p_at_1"] for v in values])),
        p_at_3=float(np.mean([v["p_at_3"] for v in values])),
        p_at_5=float(np.mean([v["p_at_5"] for v in values])),
        map=float(np.mean([v["ap"] for v in values])),
        n_posts=len(values),
    )


def valid_intersection_histogram(annotations: Iterable[Annotation]) -> dict[int, int]:
    """Distribution of |valid_1 & valid_2| across posts (a CLI convenience)."""
    pairs = _annotation_pairs(annotations)
    histogram: dict[int, int] = {}
    for first, second in pairs.values():
        size = len(first.valid & second.valid)
        histogram[size] = histogram.get(size, 0) + 1
    return dict(sorted(histogram.items()))


def read_annotations(path: str | Path) -> list[Annotation]:
    """Load annotations.jsonl: post_id, annotator_id, best, valid[]."""
    annotations = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                annotations.append(
                    Annotation(
                        post_id=raw["post_id"],
                        annotator_id=raw["annotator_id"],
                        best=int(raw["best"]),
                        valid={int(v) for v in raw["valid"]},
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise EvaluationError(f"{path}: line {lineno}: {exc}") from None
    return annotations
