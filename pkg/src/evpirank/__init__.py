"""Rank clarification questions for underspecified forum posts.

The package covers the full pipeline: extracting (post, question, answer)
triples from forum dumps, TF-IDF candidate retrieval, a small neural stack
with hand-written gradients, the expected-value-of-perfect-information
ranking model, reference baselines, and ranking evaluation.
"""

__version__ = "0.1.0"
