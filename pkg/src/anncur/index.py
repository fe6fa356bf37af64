"""Offline indexing: anchor selection, anchor scoring, item embeddings.

Indexing scores a fixed set of anchor queries against every item (exactly
``k_q * n_items`` oracle calls), slices the anchor-item columns out of that
score block (never re-scored), pseudo-inverts the intersection and multiplies
through to obtain one latent embedding per item. A query embedded against the
same anchor items then approximates its scores for all items by inner
product.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, FormatError, SpecError, SquareAnchorWarning
from .linalg import as_matrix, check_ids, default_rcond, pseudo_inverse
from .rng import generator

INDEX_MAGIC = b"ANCI"
INDEX_VERSION = 1

ANCHOR_STRATEGIES = ("uniform",)


@dataclass(frozen=True)
class AnchorSet:
    """Seeded selection of anchor query ids and anchor item ids.

    Ids are kept in draw order: both lists are random permutation prefixes,
    so any prefix of either list is itself a uniform sample. That is what
    makes per-budget anchor-item prefixes valid sub-samples.
    """

    anchor_queries: np.ndarray
    anchor_items: np.ndarray
    seed: int
    strategy: str = "uniform"

    @property
    def k_q(self) -> int:
        return self.anchor_queries.shape[0]

    @property
    def k_i(self) -> int:
        return self.anchor_items.shape[0]


def select_anchors(n_queries: int, n_items: int, k_q: int, k_i: int,
                   seed: int, strategy: str = "uniform") -> AnchorSet:
    """Sample anchor ids uniformly without replacement, deterministically.

    Draw order is fixed: one PCG64 stream yields a permutation of query ids
    (prefix k_q taken) and then a permutation of item ids (prefix k_i).
    """
    if strategy not in ANCHOR_STRATEGIES:
        raise SpecError(f"unknown anchor strategy {strategy!r}")
    if not 1 <= k_q <= n_queries:
        raise SpecError(f"k_q must be in [1, {n_queries}], got {k_q}")
    if not 1 <= k_i <= n_items:
        raise SpecError(f"k_i must be in [1, {n_items}], got {k_i}")
    rng = generator(seed)
    queries = rng.permutation(n_queries)[:k_q].astype(np.int64)
    items = rng.permutation(n_items)[:k_i].astype(np.int64)
    return AnchorSet(anchor_queries=queries, anchor_items=items,
                     seed=int(seed), strategy=strategy)


@dataclass
class CurIndex:
    """Persisted retrieval index: anchor ids plus latent item embeddings.

    ``anchor_scores`` holds the raw anchor-query score block and exists only
    in memory (the on-disk format stores just the embeddings); it is required
    to derive sub-indexes for smaller anchor-item prefixes.
    """

    anchor_items: np.ndarray
    anchor_queries: np.ndarray
    item_embeddings: np.ndarray      # (k_i, n_items)
    rcond: float
    build_cost: int
    anchor_scores: np.ndarray | None = None   # (k_q, n_items), in-memory only
    _sub_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def k_i(self) -> int:
        return self.anchor_items.shape[0]

    @property
    def k_q(self) -> int:
        return self.anchor_queries.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[1]

    def sub_index(self, k_i_use: int) -> "CurIndex":
        """Index rebuilt on the first ``k_i_use`` anchor items.

        Embedding rows are coupled through the pseudo-inverse, so a shorter
        query embedding needs a recomputed index, not a truncated one. Costs
        zero oracle calls (reuses the stored anchor scores); results are
        cached per prefix length.
        """
        if not 1 <= k_i_use <= self.k_i:
            raise SpecError(f"k_i_use must be in [1, {self.k_i}], got {k_i_use}")
        if k_i_use == self.k_i:
            return self
        cached = self._sub_cache.get(k_i_use)
        if cached is not None:
            return cached
        if self.anchor_scores is None:
            raise SpecError(
                "sub-indexing needs in-memory anchor scores; an index loaded "
                "from disk serves only its own anchor-item count"
            )
        items = self.anchor_items[:k_i_use]
        sub = _assemble(self.anchor_scores, items, self.anchor_queries,
                        self.rcond, self.build_cost)
        self._sub_cache[k_i_use] = sub
        return sub


def _assemble(anchor_scores, anchor_items, anchor_queries, rcond,
              build_cost) -> CurIndex:
    if anchor_queries.shape[0] == anchor_items.shape[0]:
        warnings.warn(
            f"k_q == k_i == {anchor_items.shape[0]}; the square anchor block "
            "tends to be ill-conditioned, prefer unequal anchor counts",
            SquareAnchorWarning, stacklevel=3,
        )
    anchor_block = anchor_scores[:, anchor_items]
    if not np.any(anchor_block):
        raise DegenerateError("anchor intersection block is all zeros")
    joining = pseudo_inverse(anchor_block, rcond)
    return CurIndex(
        anchor_items=np.asarray(anchor_items, dtype=np.int64),
        anchor_queries=np.asarray(anchor_queries, dtype=np.int64),
        item_embeddings=joining @ anchor_scores,
        rcond=float(rcond),
        build_cost=int(build_cost),
        anchor_scores=anchor_scores,
    )


def build_index(oracle, anchors: AnchorSet, rcond: float | None = None,
                workers: int = 1) -> CurIndex:
    """Score anchors against all items and assemble the index.

    Uses exactly ``k_q * n_items`` oracle calls: the anchor-item columns are
    sliced out of the scored block, never re-scored. Warns when
    ``k_q == k_i`` (ill-conditioned intersection).
    """
    queries = check_ids(anchors.anchor_queries, oracle.n_queries,
                        "anchor_queries")
    items = check_ids(anchors.anchor_items, oracle.n_items, "anchor_items")
    if rcond is None:
        rcond = default_rcond((queries.size, items.size))
    elif rcond < 0:
        raise SpecError("rcond must be nonnegative")
    scores = np.empty((queries.size, oracle.n_items))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = pool.map(oracle.score_row, queries)
            for idx, row in enumerate(rows):
                scores[idx] = row
    else:
        for idx, q in enumerate(queries):
            scores[idx] = oracle.score_row(q)
    scores.setflags(write=False)
    return _assemble(scores, items, queries, rcond,
                     queries.size * oracle.n_items)


# -- index files -------------------------------------------------------------

_HEADER = struct.Struct("<4sIQQQ")
_TAIL = struct.Struct("<dQ")


def save_index(index: CurIndex, path) -> None:
    """Write the index in the binary little-endian format (embeddings + ids)."""
    emb = as_matrix(index.item_embeddings, "item_embeddings")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.k_i,
                              index.n_items, index.k_q))
        fh.write(np.ascontiguousarray(index.anchor_items, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(index.anchor_queries, dtype="<u8").tobytes())
        fh.write(_TAIL.pack(index.rcond, index.build_cost))
        fh.write(np.ascontiguousarray(emb, dtype="<f8").tobytes())


def load_index(path) -> CurIndex:
    """Read an index written by :func:`save_index` (bit-exact round trip)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, k_i, n_items, k_q = _HEADER.unpack(head)
        if magic != INDEX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != INDEX_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        body = fh.read()
    expected = (k_i + k_q) * 8 + _TAIL.size + k_i * n_items * 8
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} body bytes, got {len(body)}")
    pos = k_i * 8
    items = np.frombuffer(body[:pos], dtype="<u8").astype(np.int64)
    queries = np.frombuffer(body[pos:pos + k_q * 8], dtype="<u8").astype(np.int64)
    pos += k_q * 8
    rcond, build_cost = _TAIL.unpack_from(body, pos)
    pos += _TAIL.size
    emb = np.frombuffer(body[pos:], dtype="<f8").reshape(k_i, n_items).copy()
    return CurIndex(anchor_items=items, anchor_queries=queries,
                    item_embeddings=emb, rcond=rcond, build_cost=build_cost,
                    anchor_scores=None)
