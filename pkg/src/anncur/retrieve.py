"""Test-time inference under an explicit oracle-call budget.

A query is embedded by scoring it against the index's anchor items (one
oracle call per anchor), items are ranked by inner product against the latent
item embeddings (exact brute-force search, zero oracle calls), and the
retrieved candidates can be re-ranked with exact oracle scores (one call per
candidate). Ties always break toward the smaller item id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .index import CurIndex

__all__ = [
    "QueryEmbedding",
    "RetrievalResult",
    "BudgetSplit",
    "top_ids",
    "embed_query",
    "approx_scores",
    "retrieve_topk",
    "rerank",
    "query_under_budget",
]


@dataclass(frozen=True)
class QueryEmbedding:
    """Raw oracle scores of one query against an anchor-item prefix."""

    query_id: int
    values: np.ndarray
    calls_spent: int


@dataclass
class RetrievalResult:
    """Ranked item ids with scores and the exact call-cost breakdown.

    ``approx_scores`` are inner-product scores aligned to ``item_ids`` (absent
    for pure re-ranking); ``exact_scores`` are oracle scores for re-ranked
    results. The ranking is non-increasing in exact scores when present,
    otherwise in approximate scores.
    """

    item_ids: np.ndarray
    approx_scores: np.ndarray | None
    exact_scores: np.ndarray | None
    embed_calls: int
    rerank_calls: int

    @property
    def total_calls(self) -> int:
        return self.embed_calls + self.rerank_calls


def top_ids(scores, k: int) -> np.ndarray:
    """Ids of the k largest scores, ties broken toward the smaller id."""
    scores = np.asarray(scores)
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise SpecError(f"k must be in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -scores))
    return order[:k]


def embed_query(oracle, index: CurIndex, q: int,
                k_i_use: int | None = None) -> QueryEmbedding:
    """Score the query against the first ``k_i_use`` anchor items.

    Spends exactly ``k_i_use`` oracle calls. The anchor order is fixed by the
    index, so shorter embeddings are prefixes of longer ones.
    """
    if k_i_use is None:
        k_i_use = index.k_i
    if not 1 <= k_i_use <= index.k_i:
        raise SpecError(f"k_i_use must be in [1, {index.k_i}], got {k_i_use}")
    anchors = index.anchor_items[:k_i_use]
    values = oracle.score_batch(np.full(k_i_use, q, dtype=np.int64), anchors)
    return QueryEmbedding(query_id=int(q), values=values, calls_spent=k_i_use)


def approx_scores(embedding: QueryEmbedding, index: CurIndex) -> np.ndarray:
    """Inner-product scores of the query against every item; zero oracle calls.

    The embedding length must equal the index's anchor-item count; for a
    shorter embedding use ``index.sub_index(k)`` built on that prefix.
    """
    if embedding.values.shape[0] != index.k_i:
        raise SpecError(
            f"embedding length {embedding.values.shape[0]} != index anchor "
            f"count {index.k_i}; use index.sub_index() for prefix embeddings"
        )
    return embedding.values @ index.item_embeddings


def retrieve_topk(embedding: QueryEmbedding, index: CurIndex,
                  k_r: int) -> RetrievalResult:
    """Exact brute-force top-k_r by approximate score; zero oracle calls."""
    scores = approx_scores(embedding, index)
    ids = top_ids(scores, k_r)
    return RetrievalResult(item_ids=ids, approx_scores=scores[ids],
                           exact_scores=None,
                           embed_calls=embedding.calls_spent, rerank_calls=0)


def rerank(oracle, q: int, candidates, k: int) -> RetrievalResult:
    """Score every candidate exactly and keep the top-k.

    Spends one oracle call per candidate. Candidate ids must be distinct.
    """
    cand = np.atleast_1d(np.asarray(candidates, dtype=np.int64))
    if cand.size == 0:
        raise SpecError("candidate list is empty")
    if np.unique(cand).size != cand.size:
        raise SpecError("candidate ids contain duplicates")
    if not 1 <= k <= cand.size:
        raise SpecError(f"k must be in [1, {cand.size}], got {k}")
    exact = oracle.score_batch(np.full(cand.size, q, dtype=np.int64), cand)
    order = np.lexsort((cand, -exact))[:k]
    return RetrievalResult(item_ids=cand[order], approx_scores=None,
                           exact_scores=exact[order], embed_calls=0,
                           rerank_calls=int(cand.size))


@dataclass(frozen=True)
class BudgetSplit:
    """Per-query call budget split between embedding and re-ranking."""

    budget: int
    k_i: int
    k_r: int

    def __post_init__(self):
        if self.k_i < 1:
            raise SpecError("budget split requires k_i >= 1 (at least one anchor)")
        if self.k_r < 1:
            raise SpecError("budget split requires k_r >= 1")
        if self.k_i + self.k_r > self.budget:
            raise SpecError(
                f"split k_i={self.k_i} + k_r={self.k_r} exceeds budget {self.budget}"
            )


def query_under_budget(oracle, index: CurIndex, q: int, split: BudgetSplit,
                       k: int) -> RetrievalResult:
    """Embed, retrieve k_r candidates, re-rank them all, return the top-k.

    Total oracle calls are exactly ``split.k_i + split.k_r``.
    """
    if k > split.k_r:
        raise SpecError(f"k={k} exceeds the re-rank pool k_r={split.k_r}")
    if split.k_i > index.k_i:
        raise SpecError(
            f"split k_i={split.k_i} exceeds index anchor capacity {index.k_i}"
        )
    sub = index.sub_index(split.k_i)
    embedding = embed_query(oracle, sub, q, split.k_i)
    scores = approx_scores(embedding, sub)
    candidates = top_ids(scores, split.k_r)
    ranked = rerank(oracle, q, candidates, k)
    return RetrievalResult(item_ids=ranked.item_ids,
                           approx_scores=scores[ranked.item_ids],
                           exact_scores=ranked.exact_scores,
                           embed_calls=embedding.calls_spent,
                           rerank_calls=ranked.rerank_calls)
