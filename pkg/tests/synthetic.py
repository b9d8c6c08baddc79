"""Seeded synthetic corpora for property and acceptance tests."""

from __future__ import annotations

import numpy as np

from evpirank.embeddings import EmbeddingTable
from evpirank.ingest import PostRecord, Triple
from evpirank.retrieval import CandidateSet, build_index, doc_text, generate_candidates


def make_embedding_table(words: list[str], dim: int, rng: np.random.Generator) -> EmbeddingTable:
    vectors = {word: rng.normal(size=dim) for word in words}
    return EmbeddingTable(dim=dim, vectors=vectors)


def make_retrieval_corpus(n_posts: int, rng: np.random.Generator) -> dict[str, str]:
    """Posts with shared vocabulary plus two unique tokens each.

    The unique tokens keep every post distinguishable so self-retrieval has
    a clear winner.
    """
    shared = [f"term{k}" for k in range(300)]
    docs = {}
    for i in range(n_posts):
        n_shared = int(rng.integers(8, 20))
        words = [shared[int(rng.integers(0, len(shared)))] for _ in range(n_shared)]
        words += [f"uid{i}a", f"uid{i}b"]
        docs[f"post{i:05d}"] = " ".join(words)
    return docs


def make_clustered_corpus(
    n_posts: int = 50,
    n_families: int = 5,
    dim: int = 24,
    seed: int = 0,
) -> tuple[EmbeddingTable, list[CandidateSet]]:
    """A small corpus of posts in question/answer families.

    Posts in the same family share topic words, so TF-IDF retrieval fills
    each candidate set with the post's own family; family questions share a
    family question word, giving the candidate questions the clustered
    structure the answer loss weights by. Within a family every post gets a
    disjoint pair of code tokens that reappear in its own question and
    answer, so the original pair is identifiable from token overlap alone.
    Candidate sets are built through the real index, k = 10.
    """
    rng = np.random.default_rng(seed)
    posts_per_family = n_posts // n_families
    words: list[str] = []
    for f in range(n_families):
        words += [f"code{f}x{k}" for k in range(2 * posts_per_family)]
        words += [f"topic{f}x{k}" for k in range(3)] + [f"qword{f}", f"aword{f}"]
    words += ["which", "value", "runs"]
    # Large embeddings keep token identity loud in the mean-pooled encodings.
    table = make_embedding_table(words, dim, rng)
    for word in table.vectors:
        table.vectors[word] *= 4.0

    triples = {}
    for i in range(n_posts):
        family = i % n_families
        slot = i // n_families
        code_a, code_b = f"code{family}x{2 * slot}", f"code{family}x{2 * slot + 1}"
        body_words = (
            [f"topic{family}x{k}" for k in range(3)]
            + [code_a, code_a, code_b, code_b, "runs"]
        )
        perm = rng.permutation(len(body_words))
        body = " ".join(body_words[j] for j in perm)
        question = f"which {code_a} {code_b} {f'qword{family}'}?"
        answer = f"{code_a} {code_b} value {f'aword{family}'}"
        post = PostRecord(
            post_id=f"s{i:03d}", author_id=f"a{i}", title=f"topic{family}x0 issue",
            body=body, created_at=1000,
        )
        triples[post.post_id] = Triple(
            post=post, question=question, question_time=1010, answer=answer,
            answer_source="comment",
        )
    index = build_index(
        (post_id, doc_text(t.post.title, t.post.body)) for post_id, t in sorted(triples.items())
    )
    sets = [generate_candidates(index, triples, post_id, k=10) for post_id in sorted(triples)]
    return table, sets


def make_random_rankings_fixture(
    n_posts: int, n_candidates: int = 10
) -> tuple[list[CandidateSet], list]:
    """Minimal candidate sets plus original-only label sets for metric tests."""
    from evpirank.evaluation import LabelSet

    sets = []
    labels = []
    for i in range(n_posts):
        post_id = f"e{i:04d}"
        sets.append(
            CandidateSet(
                post_id=post_id,
                post_body=f"body {i}",
                questions=[f"q{j}?" for j in range(n_candidates)],
                answers=[f"a{j}" for j in range(n_candidates)],
                source_post_ids=[f"src{j}" for j in range(n_candidates)],
                original_index=0,
            )
        )
        labels.append(LabelSet(post_id=post_id, relevant={0}, mode="original"))
    return sets, labels
