"""Reference rankers: random, bag-of-ngrams, community QA, neural variants.

The neural baselines rank candidates with a single deep feedforward network
over LSTM encodings, trained with binary cross-entropy on the same
one-positive/nine-negative labeling the utility model uses.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingTable, avg_vector, cos_sim
from .evpi import (
    RankedList,
    TrainingExample,
    candidate_training_examples,
    rank_from_scores,
    token_matrix,
)
from .evaluation import LabelSet, MetricReport
from .neural import (
    FeedForwardParams,
    LstmParams,
    feedforward_backward,
    feedforward_forward,
    lstm_backward,
    lstm_forward,
    sigmoid,
    zeros_like_tensors,
)
from .retrieval import CandidateSet, tokenize
from .rng import substream

NGRAM_FEATURE_BITS = 20
NGRAM_FEATURE_SPACE = 1 << NGRAM_FEATURE_BITS
_NGRAM_HASH_KEY = b"evpirank-ngrams-v1"

NEURAL_BASELINE_HIDDEN_LAYERS = 10
NEURAL_VARIANTS = ("pq", "pa", "pqa")

QUESTION_WORDS = frozenset(
    {"what", "when", "where", "who", "whom", "whose", "why", "how", "which"}
)


# ---------------------------------------------------------------------------
# Random baseline


def random_rank_metrics(
    candidate_sets: Sequence[CandidateSet],
    labelsets: Sequence[LabelSet],
    n_perm: int = 1000,
    seed: int = 0,
) -> MetricReport:
    """Metrics of a uniformly random ranker, averaged over n_perm draws.

    Permutations are drawn per post from a substream keyed by post id, so
    the report does not depend on input ordering.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    relevant_by_post = {ls.post_id: ls.relevant for ls in labelsets}
    per_post: dict[str, tuple[float, float, float, float]] = {}
    for cs in candidate_sets:
        relevant = relevant_by_post.get(cs.post_id)
        if not relevant:
            continue
        n = len(cs)
        rng = substream(seed, f"random-rank/{cs.post_id}")
        perms = np.argsort(rng.random((n_perm, n)), axis=1)
        hits = np.isin(perms, sorted(relevant))
        ranks = np.arange(1, n + 1)
        precisions = np.cumsum(hits, axis=1) / ranks
        per_post[cs.post_id] = (
            float(hits[:, :1].mean()),
            float(hits[:, : min(3, n)].sum(axis=1).mean()) / 3,
            float(hits[:, : min(5, n)].sum(axis=1).mean()) / 5,
            float((precisions * hits).sum(axis=1).mean()) / len(relevant),
        )
    if not per_post:
        raise ValueError("no posts with relevant labels")
    # Sum in post_id order so the report is independent of input ordering.
    ordered = [per_post[post_id] for post_id in sorted(per_post)]
    totals = [sum(values[k] for values in ordered) for k in range(4)]
    n_posts = len(ordered)
    return MetricReport(
        p_at_1=totals[0] / n_posts,
        p_at_3=totals[1] / n_posts,
        p_at_5=totals[2] / n_posts,
        map=totals[3] / n_posts,
        n_posts=n_posts,
    )


def random_rankings(
    candidate_sets: Sequence[CandidateSet], seed: int = 0
) -> list[RankedList]:
    """One seeded uniform permutation per post, for rankings files."""
    out = []
    for cs in candidate_sets:
        n = len(cs)
        rng = substream(seed, f"rank/random/{cs.post_id}")
        order = [int(v) for v in rng.permutation(n)]
        scores = [(n - r) / n for r in range(n)]
        out.append(RankedList(post_id=cs.post_id, order=order, scores=scores))
    return out


# ---------------------------------------------------------------------------
# Bag-of-ngrams with hinge loss


def _ngrams(tokens: Sequence[str], max_n: int = 3) -> dict[str, int]:
    counts: dict[str, int] = {}
    for n in range(1, max_n + 1):
        for start in range(len(tokens) - n + 1):
            gram = "_".join(tokens[start : start + n])
            counts[gram] = counts.get(gram, 0) + 1
    return counts


def hash_feature(key: str) -> int:
    """Stable feature id in [0, 2^20); fixed keyed hash across runs."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8, key=_NGRAM_HASH_KEY).digest()
    return int.from_bytes(digest, "little") % NGRAM_FEATURE_SPACE


def ngram_features(post: str, question: str, answer: str) -> dict[int, float]:
    """Hashed cross-product n-gram counts over (p,q), (q,a) and (p,a)."""
    grams = {
        "p": _ngrams(tokenize(post)),
        "q": _ngrams(tokenize(question)),
        "a": _ngrams(tokenize(answer)),
    }
    features: dict[int, float] = {}
    for tag, left, right in (("pq", "p", "q"), ("qa", "q", "a"), ("pa", "p", "a")):
        for gx, cx in grams[left].items():
            for gy, cy in grams[right].items():
                fid = hash_feature(f"{tag}|{gx}|{gy}")
                features[fid] = features.get(fid, 0.0) + cx * cy
    return features


def _sparse_dot(weights: np.ndarray, features: dict[int, float]) -> float:
    return float(sum(weights[fid] * value for fid, value in features.items()))


def hinge_loss(weights: np.ndarray, features: dict[int, float], label: int) -> float:
    """max(0, 1 - y * w.x) with y in {-1, +1} derived from the 0/1 label."""
    y = 1.0 if label == 1 else -1.0
    return max(0.0, 1.0 - y * _sparse_dot(weights, features))


def ngram_train(
    examples: Sequence[TrainingExample],
    epochs: int = 10,
    lr: float = 0.1,
) -> np.ndarray:
    """Sub-gradient descent on the hinge loss over hashed n-gram features.

    Examples are visited in their given order each epoch, which keeps the
    result deterministic. Both classes must be present.
    """
    labels = {ex.label for ex in examples}
    if labels != {0, 1}:
        raise ValueError("training needs both positive and negative examples")
    features = [ngram_features(ex.post, ex.question, ex.answer) for ex in examples]
    weights = np.zeros(NGRAM_FEATURE_SPACE)
    for _ in range(epochs):
        for ex, feats in zip(examples, features):
            y = 1.0 if ex.label == 1 else -1.0
            if y * _sparse_dot(weights, feats) < 1.0:
                for fid, value in feats.items():
                    weights[fid] += lr * y * value
    return weights


@dataclass
class NgramModel:
    name = "ngrams"
    weights: np.ndarray

    def score(self, post: str, question: str, answer: str) -> float:
        return _sparse_dot(self.weights, ngram_features(post, question, answer))

    def rank(self, cs: CandidateSet) -> RankedList:
        scores = [self.score(cs.post_body, cs.questions[j], cs.answers[j]) for j in range(len(cs))]
        return rank_from_scores(cs.post_id, scores)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"ngrams/w": self.weights}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "NgramModel":
        return cls(weights=tensors["ngrams/w"])


# ---------------------------------------------------------------------------
# Community QA baseline (logistic regression over string/embedding features)


def cqa_features(post: str, question: str, table: EmbeddingTable) -> np.ndarray:
    """Dense similarity features of a (post, question) pair.

    [cos(p_hat, q_hat), token overlap, bigram overlap, length ratio,
    question-word count, contains-you flag]
    """
    p_tokens = tokenize(post)
    q_tokens = tokenize(question)
    p_set, q_set = set(p_tokens), set(q_tokens)
    p_bi = {tuple(p_tokens[i : i + 2]) for i in range(len(p_tokens) - 1)}
    q_bi = {tuple(q_tokens[i : i + 2]) for i in range(len(q_tokens) - 1)}
    cos = cos_sim(avg_vector(table, p_tokens).values, avg_vector(table, q_tokens).values)
    token_overlap = len(p_set & q_set) / max(1, len(q_set))
    bigram_overlap = len(p_bi & q_bi) / max(1, len(q_bi))
    length_ratio = len(q_tokens) / max(1, len(p_tokens))
    question_words = float(sum(1 for tok in q_tokens if tok in QUESTION_WORDS))
    has_you = 1.0 if "you" in q_set else 0.0
    return np.array([cos, token_overlap, bigram_overlap, length_ratio, question_words, has_you])


@dataclass
class CqaModel:
    name = "cqa"
    weights: np.ndarray
    bias: float

    def score(self, post: str, question: str, table: EmbeddingTable) -> float:
        return sigmoid(float(self.weights @ cqa_features(post, question, table) + self.bias))

    def rank(self, cs: CandidateSet, table: EmbeddingTable) -> RankedList:
        scores = [self.score(cs.post_body, cs.questions[j], table) for j in range(len(cs))]
        return rank_from_scores(cs.post_id, scores)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"cqa/w": self.weights, "cqa/b": np.array([self.bias])}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "CqaModel":
        return cls(weights=tensors["cqa/w"], bias=float(tensors["cqa/b"][0]))


def cqa_train(
    examples: Sequence[TrainingExample],
    table: EmbeddingTable,
    epochs: int = 500,
    lr: float = 0.5,
) -> CqaModel:
    """Batch gradient descent for logistic regression on CQA features."""
    labels = {ex.label for ex in examples}
    if labels != {0, 1}:
        raise ValueError("training needs both positive and negative examples")
    X = np.stack([cqa_features(ex.post, ex.question, table) for ex in examples])
    y = np.array([float(ex.label) for ex in examples])
    constant = np.all(X == X[0:1, :], axis=0)
    if np.all(constant):
        warnings.warn("all CQA features are constant across examples", stacklevel=2)
    weights = np.zeros(X.shape[1])
    bias = 0.0
    n = X.shape[0]
    for _ in range(epochs):
        probs = sigmoid(X @ weights + bias)
        error = probs - y
        weights -= lr * (X.T @ error) / n
        bias -= lr * float(error.mean())
    return CqaModel(weights=weights, bias=bias)


def cqa_score(model: CqaModel, post: str, question: str, table: EmbeddingTable) -> float:
    return model.score(post, question, table)


# ---------------------------------------------------------------------------
# Neural baselines


@dataclass
class NeuralBaselineParams:
    """LSTM encoders for the used inputs plus one deep scoring network."""

    variant: str
    lstm_post: LstmParams
    lstm_question: LstmParams | None
    lstm_answer: LstmParams | None
    ff: FeedForwardParams

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.lstm_post.tensors("lstm_post/"))
        if self.lstm_question is not None:
            out.update(self.lstm_question.tensors("lstm_question/"))
        if self.lstm_answer is not None:
            out.update(self.lstm_answer.tensors("lstm_answer/"))
        out.update(self.ff.tensors("ff/"))
        return out

    @classmethod
    def from_tensors(cls, variant: str, tensors: dict[str, np.ndarray]) -> "NeuralBaselineParams":
        uses_q, uses_a = _variant_uses(variant)
        return cls(
            variant=variant,
            lstm_post=LstmParams.from_tensors(tensors, "lstm_post/"),
            lstm_question=LstmParams.from_tensors(tensors, "lstm_question/") if uses_q else None,
            lstm_answer=LstmParams.from_tensors(tensors, "lstm_answer/") if uses_a else None,
            ff=FeedForwardParams.from_tensors(tensors, "ff/"),
        )


def _variant_uses(variant: str) -> tuple[bool, bool]:
    if variant not in NEURAL_VARIANTS:
        raise ValueError(f"unknown neural variant {variant!r}; valid: {', '.join(NEURAL_VARIANTS)}")
    return "q" in variant, "a" in variant


def init_neural_baseline(
    variant: str, embed_dim: int, hidden_dim: int, rng: np.random.Generator
) -> NeuralBaselineParams:
    uses_q, uses_a = _variant_uses(variant)
    n_inputs = 1 + int(uses_q) + int(uses_a)
    dims = [n_inputs * hidden_dim] + [hidden_dim] * NEURAL_BASELINE_HIDDEN_LAYERS + [1]
    return NeuralBaselineParams(
        variant=variant,
        lstm_post=LstmParams.init(embed_dim, hidden_dim, rng),
        lstm_question=LstmParams.init(embed_dim, hidden_dim, rng) if uses_q else None,
        lstm_answer=LstmParams.init(embed_dim, hidden_dim, rng) if uses_a else None,
        ff=FeedForwardParams.init(dims, rng),
    )


@dataclass
class _PreparedBaseline:
    cs: CandidateSet
    post_tokens: np.ndarray
    question_tokens: list[np.ndarray]
    answer_tokens: list[np.ndarray]


class NeuralBaselineModel:
    """Scores candidates with sigma(FF(encodings)) and BCE training loss."""

    def __init__(self, params: NeuralBaselineParams, table: EmbeddingTable):
        self.params = params
        self.table = table
        self.name = f"neural-{params.variant}"

    def tensors(self) -> dict[str, np.ndarray]:
        return self.params.tensors()

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.params = NeuralBaselineParams.from_tensors(
            self.params.variant, {k: v.copy() for k, v in tensors.items()}
        )

    def prepare(self, cs: CandidateSet) -> _PreparedBaseline:
        uses_q, uses_a = _variant_uses(self.params.variant)
        return _PreparedBaseline(
            cs=cs,
            post_tokens=token_matrix(self.table, cs.post_body),
            question_tokens=[token_matrix(self.table, q) for q in cs.questions]
            if uses_q
            else [np.zeros((0, self.table.dim)) for _ in cs.questions],
            answer_tokens=[token_matrix(self.table, a) for a in cs.answers]
            if uses_a
            else [np.zeros((0, self.table.dim)) for _ in cs.answers],
        )

    def _ff_input(self, p_bar, q_bar, a_bar) -> np.ndarray:
        uses_q, uses_a = _variant_uses(self.params.variant)
        parts = [p_bar]
        if uses_q:
            parts.append(q_bar)
        if uses_a:
            parts.append(a_bar)
        return np.concatenate(parts)

    def loss_and_grads(
        self, batch: Sequence[_PreparedBaseline]
    ) -> tuple[float, dict[str, np.ndarray]]:
        params = self.params
        uses_q, uses_a = _variant_uses(params.variant)
        hidden = params.lstm_post.hidden_dim
        tensors = self.tensors()
        grads = zeros_like_tensors(tensors)
        total = 0.0
        for prep in batch:
            cs = prep.cs
            n = len(cs)
            p_bar, p_cache = lstm_forward(params.lstm_post, prep.post_tokens)
            d_p_bar = np.zeros(hidden)
            for j in range(n):
                y = 1 if j == cs.original_index else 0
                q_bar = q_cache = a_bar = a_cache = None
                if uses_q:
                    q_bar, q_cache = lstm_forward(params.lstm_question, prep.question_tokens[j])
                if uses_a:
                    a_bar, a_cache = lstm_forward(params.lstm_answer, prep.answer_tokens[j])
                x = self._ff_input(p_bar, q_bar, a_bar)
                s_out, acts = feedforward_forward(params.ff, x)
                s = float(s_out[0])
                u = sigmoid(s)
                u_c = min(max(u, 1e-12), 1.0 - 1e-12)
                total += -(y * math.log(u_c) + (1 - y) * math.log(1.0 - u_c))
                d_s = (u - y) if 1e-12 < u < 1.0 - 1e-12 else 0.0
                ff_grads, d_x = feedforward_backward(params.ff, acts, np.array([d_s]))
                for name, grad in ff_grads.items():
                    grads[f"ff/{name}"] += grad
                d_p_bar += d_x[:hidden]
                offset = hidden
                if uses_q:
                    for name, grad in lstm_backward(
                        params.lstm_question, q_cache, d_x[offset : offset + hidden]
                    ).items():
                        grads[f"lstm_question/{name}"] += grad
                    offset += hidden
                if uses_a:
                    for name, grad in lstm_backward(
                        params.lstm_answer, a_cache, d_x[offset : offset + hidden]
                    ).items():
                        grads[f"lstm_answer/{name}"] += grad
            for name, grad in lstm_backward(params.lstm_post, p_cache, d_p_bar).items():
                grads[f"lstm_post/{name}"] += grad
        n_posts = max(1, len(batch))
        for name in grads:
            grads[name] /= n_posts
        return total / n_posts, grads

    def rank_prepared(self, prep: _PreparedBaseline) -> RankedList:
        params = self.params
        uses_q, uses_a = _variant_uses(params.variant)
        cs = prep.cs
        p_bar, _ = lstm_forward(params.lstm_post, prep.post_tokens)
        scores = []
        for j in range(len(cs)):
            q_bar = a_bar = None
            if uses_q:
                q_bar, _ = lstm_forward(params.lstm_question, prep.question_tokens[j])
            if uses_a:
                a_bar, _ = lstm_forward(params.lstm_answer, prep.answer_tokens[j])
            x = self._ff_input(p_bar, q_bar, a_bar)
            s_out, _ = feedforward_forward(params.ff, x)
            scores.append(sigmoid(float(s_out[0])))
        return rank_from_scores(cs.post_id, scores)

    def rank(self, cs: CandidateSet) -> RankedList:
        return self.rank_prepared(self.prepare(cs))


def neural_baseline_train(
    variant: str,
    train_sets: Sequence[CandidateSet],
    tune_sets: Sequence[CandidateSet],
    table: EmbeddingTable,
    config,
) -> tuple[NeuralBaselineModel, "object"]:
    """Train one neural baseline variant; returns the best-MAP model and log."""
    from .training import fit

    rng = substream(config.seed, f"init/neural-{variant}")
    params = init_neural_baseline(variant, table.dim, config.hidden_dim, rng)
    model = NeuralBaselineModel(params, table)
    result = fit(model, train_sets, tune_sets, config)
    return model, result


def build_labeled_examples(candidate_sets: Iterable[CandidateSet]) -> list[TrainingExample]:
    """Flatten candidate sets into labeled (p, q, a) training examples."""
    examples: list[TrainingExample] = []
    for cs in candidate_sets:
        examples.extend(candidate_training_examples(cs))
    return examples
