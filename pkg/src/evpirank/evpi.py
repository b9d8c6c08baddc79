"""Expected-value-of-perfect-information question ranking.

An answer model scores how likely each candidate answer is for a given
question, a utility model scores how much an answer would improve the post,
and a question's value is the utility expectation over the candidate answer
pool. Both models share three LSTM text encoders and are trained jointly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import AvgVector, EmbeddingTable, avg_vector, cos_sim
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

FF_HIDDEN_LAYERS = 5

BCE_CLAMP = 1e-12


@dataclass
class EvpiParams:
    """Three LSTM encoders plus the answer and utility feedforward nets.

    ff_ans maps the concatenated post/question encodings (2 * hidden) to the
    embedding space (dim d) so it can be compared to average answer vectors;
    ff_util maps the concatenated post/question/answer encodings (3 * hidden)
    to a scalar squashed by a sigmoid at the call site.
    """

    lstm_post: LstmParams
    lstm_question: LstmParams
    lstm_answer: LstmParams
    ff_ans: FeedForwardParams
    ff_util: FeedForwardParams

    @property
    def hidden_dim(self) -> int:
        return self.lstm_post.hidden_dim

    @property
    def embed_dim(self) -> int:
        return self.lstm_post.input_dim

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.lstm_post.tensors("lstm_post/"))
        out.update(self.lstm_question.tensors("lstm_question/"))
        out.update(self.lstm_answer.tensors("lstm_answer/"))
        out.update(self.ff_ans.tensors("ff_ans/"))
        out.update(self.ff_util.tensors("ff_util/"))
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "EvpiParams":
        return cls(
            lstm_post=LstmParams.from_tensors(tensors, "lstm_post/"),
            lstm_question=LstmParams.from_tensors(tensors, "lstm_question/"),
            lstm_answer=LstmParams.from_tensors(tensors, "lstm_answer/"),
            ff_ans=FeedForwardParams.from_tensors(tensors, "ff_ans/"),
            ff_util=FeedForwardParams.from_tensors(tensors, "ff_util/"),
        )


def init_evpi_params(
    embed_dim: int, hidden_dim: int, rng: np.random.Generator
) -> EvpiParams:
    ans_dims = [2 * hidden_dim] + [hidden_dim] * FF_HIDDEN_LAYERS + [embed_dim]
    util_dims = [3 * hidden_dim] + [hidden_dim] * FF_HIDDEN_LAYERS + [1]
    return EvpiParams(
        lstm_post=LstmParams.init(embed_dim, hidden_dim, rng),
        lstm_question=LstmParams.init(embed_dim, hidden_dim, rng),
        lstm_answer=LstmParams.init(embed_dim, hidden_dim, rng),
        ff_ans=FeedForwardParams.init(ans_dims, rng),
        ff_util=FeedForwardParams.init(util_dims, rng),
    )


@dataclass
class TrainingExample:
    """One labeled (post, question, answer) instance from a candidate set."""

    post: str
    question: str
    answer: str
    label: int
    candidate_index: int


def candidate_training_examples(cs: CandidateSet) -> list[TrainingExample]:
    """The one positive and n-1 negative examples a candidate set induces."""
    return [
        TrainingExample(
            post=cs.post_body,
            question=cs.questions[j],
            answer=cs.answers[j],
            label=1 if j == cs.original_index else 0,
            candidate_index=j,
        )
        for j in range(len(cs))
    ]


@dataclass
class RankedList:
    """A model's ordering of one candidate set, best first.

    scores are aligned with order: scores[r] belongs to candidate order[r]
    and is non-increasing in r.
    """

    post_id: str
    order: list[int]
    scores: list[float]


def rank_from_scores(post_id: str, scores: Sequence[float]) -> RankedList:
    """Descending-score ordering with ties broken by ascending index."""
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return RankedList(post_id=post_id, order=order, scores=[float(scores[j]) for j in order])


# ---------------------------------------------------------------------------
# Text encoding helpers


def token_matrix(table: EmbeddingTable, text: str) -> np.ndarray:
    """Embedding rows for the in-vocabulary tokens of text, in order."""
    vectors = [table.vectors[tok] for tok in tokenize(text) if tok in table.vectors]
    if not vectors:
        return np.zeros((0, table.dim))
    return np.asarray(vectors, dtype=np.float64)


def encode_text(lstm: LstmParams, table: EmbeddingTable, text: str) -> np.ndarray:
    mean, _ = lstm_forward(lstm, token_matrix(table, text))
    return mean


# ---------------------------------------------------------------------------
# Scoring primitives


def dist(rep: np.ndarray, a_hat: AvgVector | np.ndarray) -> float:
    """1 - cos_sim(rep, a_hat); lies in [0, 2]."""
    values = a_hat.values if isinstance(a_hat, AvgVector) else a_hat
    return 1.0 - cos_sim(rep, values)


def _dist_grad_wrt_rep(rep: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of dist(rep, target) with respect to rep.

    Zero at the degenerate points where either vector has zero norm (the
    cosine is defined as 0 there, a locally constant choice).
    """
    nr = float(np.linalg.norm(rep))
    nt = float(np.linalg.norm(target))
    if nr == 0.0 or nt == 0.0:
        return np.zeros_like(rep)
    cos = float(np.dot(rep, target) / (nr * nt))
    return cos * rep / nr**2 - target / (nr * nt)


def similarity_weight(q_hat_i: np.ndarray, q_hat_j: np.ndarray, clamp: bool = True) -> float:
    """Question-similarity weight; negative similarities clamp to 0."""
    sim = cos_sim(q_hat_i, q_hat_j)
    if clamp:
        return max(0.0, sim)
    return sim


def f_ans(params: EvpiParams, post_text: str, question_text: str, table: EmbeddingTable) -> np.ndarray:
    """Predicted answer representation in the embedding space."""
    p_bar = encode_text(params.lstm_post, table, post_text)
    q_bar = encode_text(params.lstm_question, table, question_text)
    out, _ = feedforward_forward(params.ff_ans, np.concatenate([p_bar, q_bar]))
    return out


def answer_prob(
    params: EvpiParams,
    post: str,
    q_i: str,
    a_j: str,
    q_j: str,
    table: EmbeddingTable,
    clamp_negative_sim: bool = True,
) -> float:
    """Likelihood that a_j answers question q_i on the post.

    exp(-dist(f_ans(post, q_i), a_hat_j)) weighted by the similarity of q_i
    to the question q_j originally paired with a_j. Always in [0, 1] under
    the default clamp.
    """
    rep = f_ans(params, post, q_i, table)
    a_hat = avg_vector(table, tokenize(a_j))
    q_hat_i = avg_vector(table, tokenize(q_i)).values
    q_hat_j = avg_vector(table, tokenize(q_j)).values
    weight = similarity_weight(q_hat_i, q_hat_j, clamp_negative_sim)
    return math.exp(-dist(rep, a_hat)) * weight


def loss_ans(
    params: EvpiParams,
    cs: CandidateSet,
    table: EmbeddingTable,
    clamp_negative_sim: bool = True,
) -> float:
    """Answer-model loss for one post and its candidate set.

    Distance of the predicted representation to the original answer, plus the
    distances to the other candidates' answers weighted by how similar their
    questions are to the original question.
    """
    o = cs.original_index
    rep = f_ans(params, cs.post_body, cs.questions[o], table)
    a_hats = [avg_vector(table, tokenize(a)) for a in cs.answers]
    q_hats = [avg_vector(table, tokenize(q)).values for q in cs.questions]
    total = dist(rep, a_hats[o])
    for j in range(len(cs)):
        if j == o:
            continue
        weight = similarity_weight(q_hats[o], q_hats[j], clamp_negative_sim)
        total += dist(rep, a_hats[j]) * weight
    return total


def utility(
    params: EvpiParams, post: str, q_j: str, a_j: str, table: EmbeddingTable
) -> float:
    """sigma(F_util(post, question, answer)); how complete the updated post is."""
    p_bar = encode_text(params.lstm_post, table, post)
    q_bar = encode_text(params.lstm_question, table, q_j)
    a_bar = encode_text(params.lstm_answer, table, a_j)
    out, _ = feedforward_forward(params.ff_util, np.concatenate([p_bar, q_bar, a_bar]))
    return sigmoid(float(out[0]))


def loss_util(y: int, utility_value: float) -> float:
    """Binary cross-entropy with the probability clamped away from 0 and 1."""
    u = min(max(utility_value, BCE_CLAMP), 1.0 - BCE_CLAMP)
    return -(y * math.log(u) + (1 - y) * math.log(1.0 - u))


def joint_loss(
    params: EvpiParams,
    candidate_sets: Iterable[CandidateSet],
    table: EmbeddingTable,
    clamp_negative_sim: bool = True,
) -> float:
    """Sum over posts of the answer loss plus all per-candidate utility losses."""
    total = 0.0
    for cs in candidate_sets:
        total += loss_ans(params, cs, table, clamp_negative_sim)
        for j in range(len(cs)):
            y = 1 if j == cs.original_index else 0
            total += loss_util(y, utility(params, cs.post_body, cs.questions[j], cs.answers[j], table))
    return total


def expected_value(answer_probs: Sequence[float], utilities: Sequence[float]) -> float:
    """Sum over candidate answers of probability times utility."""
    if len(answer_probs) != len(utilities):
        raise ValueError("probability and utility lists must have equal length")
    return float(np.dot(np.asarray(answer_probs, dtype=np.float64), np.asarray(utilities, dtype=np.float64)))


def evpi_score(
    params: EvpiParams,
    post: str,
    q_i: str,
    cs: CandidateSet,
    table: EmbeddingTable,
    clamp_negative_sim: bool = True,
) -> float:
    """Expected utility of asking q_i, summed over the candidate answer pool."""
    probs = [
        answer_prob(params, post, q_i, cs.answers[j], cs.questions[j], table, clamp_negative_sim)
        for j in range(len(cs))
    ]
    utils = [utility(params, post, cs.questions[j], cs.answers[j], table) for j in range(len(cs))]
    return expected_value(probs, utils)


def rank_questions(
    params: EvpiParams,
    cs: CandidateSet,
    table: EmbeddingTable,
    clamp_negative_sim: bool = True,
) -> RankedList:
    """Candidates ordered by descending EVPI score; ties by ascending index.

    Equivalent to scoring each question with evpi_score, but encodes every
    text only once.
    """
    prepared = prepare_candidates(cs, table, clamp_negative_sim)
    model = EvpiModel(params, table, clamp_negative_sim)
    return model.rank_prepared(prepared)


# ---------------------------------------------------------------------------
# Prepared inputs and the trainable model


@dataclass
class PreparedCandidates:
    """Token matrices and average vectors of one candidate set, cached once."""

    cs: CandidateSet
    post_tokens: np.ndarray
    question_tokens: list[np.ndarray]
    answer_tokens: list[np.ndarray]
    q_hats: list[np.ndarray]
    a_hats: list[np.ndarray]
    sim_weights: np.ndarray  # weight of candidate j in the answer loss


def prepare_candidates(
    cs: CandidateSet, table: EmbeddingTable, clamp_negative_sim: bool = True
) -> PreparedCandidates:
    q_hats = [avg_vector(table, tokenize(q)).values for q in cs.questions]
    a_hats = [avg_vector(table, tokenize(a)).values for a in cs.answers]
    o = cs.original_index
    weights = np.array(
        [similarity_weight(q_hats[o], q_hats[j], clamp_negative_sim) for j in range(len(cs))]
    )
    return PreparedCandidates(
        cs=cs,
        post_tokens=token_matrix(table, cs.post_body),
        question_tokens=[token_matrix(table, q) for q in cs.questions],
        answer_tokens=[token_matrix(table, a) for a in cs.answers],
        q_hats=q_hats,
        a_hats=a_hats,
        sim_weights=weights,
    )


class EvpiModel:
    """Trainable wrapper: joint loss with gradients, and prepared ranking."""

    name = "evpi"

    def __init__(
        self, params: EvpiParams, table: EmbeddingTable, clamp_negative_sim: bool = True
    ):
        self.params = params
        self.table = table
        self.clamp_negative_sim = clamp_negative_sim

    def tensors(self) -> dict[str, np.ndarray]:
        return self.params.tensors()

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.params = EvpiParams.from_tensors({k: v.copy() for k, v in tensors.items()})

    def prepare(self, cs: CandidateSet) -> PreparedCandidates:
        return prepare_candidates(cs, self.table, self.clamp_negative_sim)

    def loss_and_grads(
        self, batch: Sequence[PreparedCandidates]
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean per-post joint loss over the batch plus its gradient."""
        grads = zeros_like_tensors(self.tensors())
        total = 0.0
        for prep in batch:
            ans_loss, ans_grads = self.answer_loss_and_grads(prep)
            util_loss, util_grads = self.utility_loss_and_grads(prep)
            total += ans_loss + util_loss
            for name, grad in ans_grads.items():
                grads[name] += grad
            for name, grad in util_grads.items():
                grads[name] += grad
        n = max(1, len(batch))
        for name in grads:
            grads[name] /= n
        return total / n, grads

    def answer_loss_and_grads(
        self, prep: PreparedCandidates
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Answer-model loss for one post with gradients wrt all parameters."""
        params = self.params
        cs = prep.cs
        o = cs.original_index
        hidden = params.hidden_dim
        grads = zeros_like_tensors(self.tensors())

        p_bar, p_cache = lstm_forward(params.lstm_post, prep.post_tokens)
        q_bar, q_cache = lstm_forward(params.lstm_question, prep.question_tokens[o])
        rep, rep_acts = feedforward_forward(params.ff_ans, np.concatenate([p_bar, q_bar]))

        loss = dist(rep, prep.a_hats[o])
        d_rep = _dist_grad_wrt_rep(rep, prep.a_hats[o])
        for j in range(len(cs)):
            if j == o:
                continue
            weight = prep.sim_weights[j]
            if weight == 0.0:
                continue
            loss += dist(rep, prep.a_hats[j]) * weight
            d_rep = d_rep + weight * _dist_grad_wrt_rep(rep, prep.a_hats[j])
        ans_grads, d_in = feedforward_backward(params.ff_ans, rep_acts, d_rep)
        for name, grad in ans_grads.items():
            grads[f"ff_ans/{name}"] += grad
        for name, grad in lstm_backward(params.lstm_post, p_cache, d_in[:hidden]).items():
            grads[f"lstm_post/{name}"] += grad
        for name, grad in lstm_backward(params.lstm_question, q_cache, d_in[hidden:]).items():
            grads[f"lstm_question/{name}"] += grad
        return loss, grads

    def utility_loss_and_grads(
        self, prep: PreparedCandidates
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Summed per-candidate BCE utility loss for one post, with gradients."""
        params = self.params
        cs = prep.cs
        hidden = params.hidden_dim
        grads = zeros_like_tensors(self.tensors())

        p_bar, p_cache = lstm_forward(params.lstm_post, prep.post_tokens)
        d_p_bar = np.zeros(hidden)
        loss = 0.0
        for j in range(len(cs)):
            y = 1 if j == cs.original_index else 0
            q_bar, q_cache = lstm_forward(params.lstm_question, prep.question_tokens[j])
            a_bar, a_cache = lstm_forward(params.lstm_answer, prep.answer_tokens[j])
            s_out, util_acts = feedforward_forward(
                params.ff_util, np.concatenate([p_bar, q_bar, a_bar])
            )
            u = sigmoid(float(s_out[0]))
            u_c = min(max(u, BCE_CLAMP), 1.0 - BCE_CLAMP)
            loss += -(y * math.log(u_c) + (1 - y) * math.log(1.0 - u_c))
            if BCE_CLAMP < u < 1.0 - BCE_CLAMP:
                d_s = u - y
            else:
                d_s = 0.0  # clamp active: the loss is locally flat in s
            util_grads, d_in = feedforward_backward(params.ff_util, util_acts, np.array([d_s]))
            for name, grad in util_grads.items():
                grads[f"ff_util/{name}"] += grad
            d_p_bar += d_in[:hidden]
            for name, grad in lstm_backward(
                params.lstm_question, q_cache, d_in[hidden : 2 * hidden]
            ).items():
                grads[f"lstm_question/{name}"] += grad
            for name, grad in lstm_backward(
                params.lstm_answer, a_cache, d_in[2 * hidden :]
            ).items():
                grads[f"lstm_answer/{name}"] += grad
        for name, grad in lstm_backward(params.lstm_post, p_cache, d_p_bar).items():
            grads[f"lstm_post/{name}"] += grad
        return loss, grads

    def rank_prepared(self, prep: PreparedCandidates) -> RankedList:
        params = self.params
        cs = prep.cs
        n = len(cs)
        p_bar, _ = lstm_forward(params.lstm_post, prep.post_tokens)
        q_bars = [lstm_forward(params.lstm_question, prep.question_tokens[j])[0] for j in range(n)]
        a_bars = [lstm_forward(params.lstm_answer, prep.answer_tokens[j])[0] for j in range(n)]
        reps = [
            feedforward_forward(params.ff_ans, np.concatenate([p_bar, q_bars[i]]))[0]
            for i in range(n)
        ]
        utils = np.array(
            [
                sigmoid(
                    float(
                        feedforward_forward(
                            params.ff_util, np.concatenate([p_bar, q_bars[j], a_bars[j]])
                        )[0][0]
                    )
                )
                for j in range(n)
            ]
        )
        scores = []
        for i in range(n):
            probs = np.array(
                [
                    math.exp(-dist(reps[i], prep.a_hats[j]))
                    * similarity_weight(prep.q_hats[i], prep.q_hats[j], self.clamp_negative_sim)
                    for j in range(n)
                ]
            )
            scores.append(expected_value(probs, utils))
        return rank_from_scores(cs.post_id, scores)

    def rank(self, cs: CandidateSet) -> RankedList:
        return self.rank_prepared(self.prepare(cs))


def train(
    train_sets: Sequence[CandidateSet],
    tune_sets: Sequence[CandidateSet],
    table: EmbeddingTable,
    config,
) -> tuple["EvpiModel", "object"]:
    """Joint training of the answer and utility models.

    Minimizes the joint loss with Adam and returns the model restored to the
    checkpoint with the best tune-set MAP, plus the fit log.
    """
    from .rng import substream
    from .training import fit

    rng = substream(config.seed, "init/evpi")
    params = init_evpi_params(table.dim, config.hidden_dim, rng)
    model = EvpiModel(params, table, config.clamp_negative_sim)
    result = fit(model, train_sets, tune_sets, config)
    return model, result


# ---------------------------------------------------------------------------
# Rankings file


def write_rankings(path: str | Path, model_name: str, ranked: Iterable[RankedList]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for rl in ranked:
            record = {
                "post_id": rl.post_id,
                "model": model_name,
                "order": rl.order,
                "scores": rl.scores,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_rankings(path: str | Path) -> list[RankedList]:
    ranked = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                ranked.append(
                    RankedList(
                        post_id=raw["post_id"],
                        order=[int(v) for v in raw["order"]],
                        scores=[float(v) for v in raw["scores"]],
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return ranked
