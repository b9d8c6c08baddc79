"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately written from the definitions, without reusing
the library's index structures or metric code, so the two paths can be
compared against each other.
"""

from __future__ import annotations

import math
import re
from collections import Counter

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def brute_tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class BruteCorpus:
    """Precomputed term counts for scoring many queries over one corpus."""

    def __init__(self, docs: dict[str, str]):
        self.token_lists = {doc_id: brute_tokenize(text) for doc_id, text in docs.items()}
        self.counts = {doc_id: Counter(tokens) for doc_id, tokens in self.token_lists.items()}
        self.n_docs = len(docs)
        self.df: Counter = Counter()
        for counter in self.counts.values():
            for term in counter:
                self.df[term] += 1

    def score(self, query_tokens: list[str], doc_id: str) -> float:
        length = len(self.token_lists[doc_id])
        if length == 0:
            return 0.0
        total = 0.0
        for term in sorted(set(query_tokens)):
            tf = self.counts[doc_id].get(term, 0)
            if tf == 0:
                continue
            idf = 1.0 + math.log(self.n_docs / (self.df[term] + 1))
            total += math.sqrt(tf) * idf * idf / math.sqrt(length)
        return total

    def all_scores(self, query_tokens: list[str]) -> dict[str, float]:
        return {doc_id: self.score(query_tokens, doc_id) for doc_id in self.counts}


def brute_tfidf_scores(docs: dict[str, str], query_tokens: list[str]) -> dict[str, float]:
    """Score every document by looping over all (term, doc) pairs.

    score(q, d) = sum over distinct query terms t present in d of
        sqrt(count(t, d)) * (1 + ln(N / (df(t) + 1)))^2 / sqrt(len(d))
    """
    return BruteCorpus(docs).all_scores(query_tokens)


def brute_top_k(docs: dict[str, str], query_tokens: list[str], k: int) -> list[tuple[str, float]]:
    """Rank every document by brute-force score; ties by ascending doc id."""
    scores = brute_tfidf_scores(docs, query_tokens)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def brute_precision_at_k(order: list[int], relevant: set[int], k: int) -> float:
    hits = 0
    for candidate in order[:k]:
        if candidate in relevant:
            hits += 1
    return hits / k


def brute_average_precision(order: list[int], relevant: set[int]) -> float:
    running = []
    seen = 0
    for position, candidate in enumerate(order):
        if candidate in relevant:
            seen += 1
            running.append(seen / (position + 1))
    return sum(running) / len(relevant)
