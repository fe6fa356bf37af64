"""Comparison retrievers sharing the inner-product retrieval path.

Four baseline families:

* ``fixed_item_index`` embeds every item (and, at query time, the query)
  against one fixed set of anchor items using raw oracle scores.
* ``item_cur_index`` runs the skeleton-indexing pipeline on the item-item
  score matrix instead of anchor-query scores, with a second, disjoint
  anchor-item set on the query side.
* ``precomputed_retriever`` wraps externally supplied embeddings (zero
  oracle calls per query).
* ``train_linear_de`` distills a linear dual encoder from oracle scores with
  either a distribution-matching loss over each query's oracle-top items or
  a pairwise logistic loss against refreshed hard negatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CapabilityError, DivergenceError, SpecError
from .linalg import as_matrix, check_ids, pseudo_inverse
from .oracle import load_matrix, save_matrix
from .retrieve import RetrievalResult, top_ids
from .rng import derive_seed, generator

DEFAULT_FIXED_ITEMS = 500
DEFAULT_INDEX_ANCHORS = 500


@dataclass
class EmbeddingRetriever:
    """Query-embedder plus item-embedding matrix scored by inner product.

    ``cost_per_query`` is the exact number of oracle calls one query
    embedding spends (0 for precomputed embeddings). ``index_cost`` records
    the one-off oracle calls spent building ``item_embeddings``.
    """

    name: str
    item_embeddings: np.ndarray          # (d, n_items)
    cost_per_query: int
    embedder: Callable[[int, bool], np.ndarray] = field(repr=False)
    index_cost: int = 0

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[1]

    def embed(self, q: int, metered: bool = True) -> np.ndarray:
        """Embed one query; ``metered=False`` uses the ledger-exempt channel."""
        return self.embedder(q, metered)


def retrieve_with(retriever: EmbeddingRetriever, q: int,
                  k_r: int) -> RetrievalResult:
    """Top-k_r items by retriever inner product; same tie-break as the
    anchor-index path (smaller item id wins)."""
    if not 1 <= k_r <= retriever.n_items:
        raise SpecError(f"k_r must be in [1, {retriever.n_items}], got {k_r}")
    e = retriever.embed(q, metered=True)
    scores = e @ retriever.item_embeddings
    ids = top_ids(scores, k_r)
    return RetrievalResult(item_ids=ids, approx_scores=scores[ids],
                           exact_scores=None,
                           embed_calls=retriever.cost_per_query,
                           rerank_calls=0)


def _require_item_scoring(oracle):
    if not oracle.capabilities.item_item_scoring:
        raise CapabilityError("baseline requires item-item scoring capability")


def fixed_item_index(oracle, k_i: int = DEFAULT_FIXED_ITEMS,
                     seed: int = 0) -> EmbeddingRetriever:
    """Embed every item against one fixed anchor-item set.

    Item j's embedding is its item-item score against each anchor; indexing
    spends exactly ``k_i * n_items`` oracle calls. Queries embed against the
    same anchors (``k_i`` calls each).
    """
    _require_item_scoring(oracle)
    if not 1 <= k_i <= oracle.n_items:
        raise SpecError(f"k_i must be in [1, {oracle.n_items}], got {k_i}")
    anchors = generator(seed).permutation(oracle.n_items)[:k_i].astype(np.int64)
    all_items = np.arange(oracle.n_items, dtype=np.int64)
    emb = np.empty((k_i, oracle.n_items))
    for row, anchor in enumerate(anchors):
        emb[row] = oracle.score_items_batch(
            all_items, np.full(oracle.n_items, anchor, dtype=np.int64))

    def embedder(q, metered=True):
        view = oracle if metered else oracle.unmetered
        return view.score_batch(np.full(k_i, q, dtype=np.int64), anchors)

    return EmbeddingRetriever(name="fixed_item", item_embeddings=emb,
                              cost_per_query=k_i, embedder=embedder,
                              index_cost=k_i * oracle.n_items)


def item_cur_index(oracle, k_i_ind: int = DEFAULT_INDEX_ANCHORS,
                   k_i_query: int | None = None, seed: int = 0,
                   rcond: float | None = None, ind_items=None,
                   query_items=None) -> EmbeddingRetriever:
    """Skeleton indexing driven by item-item scores.

    Scores ``k_i_ind`` indexing anchor items against all items (exactly
    ``k_i_ind * n_items`` calls), slices the block on a second, disjoint
    anchor-item set of size ``k_i_query``, pseudo-inverts it and assembles
    item embeddings. Queries embed against the second set with ordinary
    query-item scores.
    """
    _require_item_scoring(oracle)
    n = oracle.n_items
    if ind_items is None and query_items is None:
        if k_i_query is None:
            k_i_query = k_i_ind
        if k_i_ind < 1 or k_i_query < 1:
            raise SpecError("anchor counts must be positive")
        if k_i_ind + k_i_query > n:
            raise SpecError(
                f"cannot draw disjoint anchor sets: {k_i_ind} + {k_i_query} > {n}"
            )
        perm = generator(seed).permutation(n).astype(np.int64)
        ind_items = perm[:k_i_ind]
        query_items = perm[k_i_ind:k_i_ind + k_i_query]
    else:
        if ind_items is None or query_items is None:
            raise SpecError("give both anchor sets or neither")
        ind_items = check_ids(ind_items, n, "ind_items")
        query_items = check_ids(query_items, n, "query_items")
        if np.intersect1d(ind_items, query_items).size:
            raise SpecError("indexing and query anchor-item sets must be disjoint")
        k_i_ind, k_i_query = ind_items.size, query_items.size

    all_items = np.arange(n, dtype=np.int64)
    scores = np.empty((k_i_ind, n))
    for row, anchor in enumerate(ind_items):
        scores[row] = oracle.score_items_batch(
            np.full(n, anchor, dtype=np.int64), all_items)
    block = scores[:, query_items]
    joining = pseudo_inverse(block, rcond)
    emb = joining @ scores                        # (k_i_query, n_items)
    query_anchors = np.asarray(query_items, dtype=np.int64)

    def embedder(q, metered=True):
        view = oracle if metered else oracle.unmetered
        return view.score_batch(
            np.full(query_anchors.size, q, dtype=np.int64), query_anchors)

    return EmbeddingRetriever(name="item_cur", item_embeddings=emb,
                              cost_per_query=int(k_i_query), embedder=embedder,
                              index_cost=k_i_ind * n)


def precomputed_retriever(item_embeddings, query_embeddings,
                          name: str = "precomputed") -> EmbeddingRetriever:
    """Retriever over externally supplied embeddings; zero calls per query.

    ``item_embeddings`` is (d, n_items); ``query_embeddings`` is one row per
    query.
    """
    items = as_matrix(item_embeddings, "item_embeddings")
    queries = as_matrix(query_embeddings, "query_embeddings")
    if queries.shape[1] != items.shape[0]:
        raise SpecError(
            f"embedding dims differ: queries {queries.shape[1]}, "
            f"items {items.shape[0]}"
        )

    def embedder(q, metered=True):
        return queries[int(q)]

    return EmbeddingRetriever(name=name, item_embeddings=items,
                              cost_per_query=0, embedder=embedder)


# -- linear dual encoder ------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LinearDeModel:
    """Linear dual encoder: bilinear scores via two feature-map matrices."""

    w_query: np.ndarray       # (d, r)
    w_item: np.ndarray        # (d, r)
    loss_history: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.w_query.shape[0]

    def embed_queries(self, query_features) -> np.ndarray:
        return np.asarray(query_features) @ self.w_query.T

    def embed_items(self, item_features) -> np.ndarray:
        return np.asarray(item_features) @ self.w_item.T

    def score_matrix(self, query_features, item_features) -> np.ndarray:
        return self.embed_queries(query_features) @ self.embed_items(item_features).T

    def as_retriever(self, oracle, name: str = "linear_de") -> EmbeddingRetriever:
        """Retriever over the model's embeddings of the oracle's features."""
        item_emb = self.embed_items(oracle.item_features).T   # (d, n_items)
        qf = oracle.query_features
        w_q = self.w_query

        def embedder(q, metered=True):
            return w_q @ qf[int(q)]

        return EmbeddingRetriever(name=name, item_embeddings=item_emb,
                                  cost_per_query=0, embedder=embedder)


def match_loss(w_query, w_item, query_feats, item_feats, top_ids_per_q,
               target_probs):
    """Distribution-matching loss and analytic gradients.

    For each query, the model's softmax over that query's oracle-top items is
    matched to the softmax of the oracle scores (cross-entropy with the
    oracle distribution as target, unit temperature). Returns the mean
    per-query loss and gradients w.r.t. both weight matrices.
    """
    x = np.asarray(query_feats)                       # (B, r)
    u = x @ w_query.T                                 # (B, d)
    y_top = np.asarray(item_feats)[top_ids_per_q]     # (B, k, r)
    v = y_top @ w_item.T                              # (B, k, d)
    z = np.einsum("bkd,bd->bk", v, u)                 # model scores
    z_shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z_shift).sum(axis=1)) + z.max(axis=1)
    p = np.asarray(target_probs)
    loss = float(np.mean(-(p * z).sum(axis=1) + lse))
    g = _softmax(z) - p                               # (B, k)
    batch = x.shape[0]
    gw_q = np.einsum("bkd,bk,br->dr", v, g, x) / batch
    gw_i = np.einsum("bd,bk,bkr->dr", u, g, y_top) / batch
    return loss, gw_q, gw_i


def pair_loss(w_query, w_item, query_feats, item_feats, pos_ids_per_q,
              neg_ids_per_q):
    """Pairwise logistic loss on (positive - negative) score margins.

    Each query's j-th oracle-top item is paired with its j-th hard negative;
    the loss is ``softplus(neg - pos)`` averaged over all pairs, which is the
    two-way softmax cross-entropy with the positive labeled. Returns the mean
    loss and analytic gradients.
    """
    x = np.asarray(query_feats)
    u = x @ w_query.T                                 # (B, d)
    y_pos = np.asarray(item_feats)[pos_ids_per_q]     # (B, k, r)
    y_neg = np.asarray(item_feats)[neg_ids_per_q]
    v_pos = y_pos @ w_item.T
    v_neg = y_neg @ w_item.T
    margin = np.einsum("bkd,bd->bk", v_pos - v_neg, u)
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    g = -_sigmoid(-margin)                            # dloss/dmargin per pair
    n_pairs = margin.size
    gw_q = np.einsum("bkd,bk,br->dr", v_pos - v_neg, g, x) / n_pairs
    gw_i = np.einsum("bd,bk,bkr->dr", u, g, y_pos - y_neg) / n_pairs
    return loss, gw_q, gw_i


def init_linear_de(rank: int, d: int | None = None,
                   seed: int = 0) -> LinearDeModel:
    """Randomly initialized model (query weights drawn first, then item).

    This is the exact starting point of :func:`train_linear_de` for the same
    (rank, d, seed), so trained-vs-init comparisons are reproducible.
    """
    if d is None:
        d = 2 * rank
    rng = generator(seed)
    w_q = rng.standard_normal((d, rank)) / np.sqrt(rank)
    w_i = rng.standard_normal((d, rank)) / np.sqrt(rank)
    return LinearDeModel(w_q, w_i, config={"d": d, "seed": int(seed)})


def _hard_negatives(model_scores, oracle_top, k_d):
    """Per query: top model-ranked items that are not oracle-top, first k_d."""
    n_q, n_items = model_scores.shape
    negs = np.empty((n_q, k_d), dtype=np.int64)
    for b in range(n_q):
        ranked = top_ids(model_scores[b], n_items)
        mask = np.isin(ranked, oracle_top[b], invert=True)
        negs[b] = ranked[mask][:k_d]
    return negs


def train_linear_de(oracle, train_queries, k_d: int, loss: str = "match",
                    d: int | None = None, lr: float = 1e-2, epochs: int = 50,
                    batch_size: int = 32, seed: int = 0) -> LinearDeModel:
    """Distill a linear dual encoder from oracle scores by minibatch SGD.

    Charges the ledger ``len(train_queries) * n_items`` calls for the oracle
    score rows of the training queries (the distillation targets); hard
    negatives for the pairwise loss are refreshed from the current model at
    every epoch. ``loss_history[e]`` is the full training loss after e
    epochs (entry 0 is the randomly initialized model).
    """
    if not oracle.capabilities.latent_features:
        raise CapabilityError("linear dual encoder needs latent features")
    if loss not in ("match", "pair"):
        raise SpecError(f"loss must be 'match' or 'pair', got {loss!r}")
    queries = check_ids(train_queries, oracle.n_queries, "train_queries")
    if not 1 <= k_d <= oracle.n_items:
        raise SpecError(f"k_d must be in [1, {oracle.n_items}], got {k_d}")
    if loss == "pair" and oracle.n_items < 2 * k_d:
        raise SpecError(
            f"pair loss needs n_items >= 2*k_d to mine {k_d} negatives"
        )
    x_all = oracle.query_features
    y_all = oracle.item_features
    r = x_all.shape[1]
    if d is None:
        d = 2 * r
    if d < 1 or lr <= 0 or epochs < 1 or batch_size < 1:
        raise SpecError("invalid training hyperparameters")

    # Distillation targets: one metered score row per training query.
    ce_rows = np.stack([oracle.score_row(q) for q in queries])
    oracle_top = np.stack([top_ids(row, k_d) for row in ce_rows])
    target_probs = _softmax(np.take_along_axis(ce_rows, oracle_top, axis=1))
    x_train = x_all[queries]

    init = init_linear_de(r, d, seed)
    w_q, w_i = init.w_query, init.w_item
    rng = generator(derive_seed(seed, 1))   # epoch shuffling stream
    config = {"loss": loss, "k_d": k_d, "d": d, "lr": lr, "epochs": epochs,
              "batch_size": batch_size, "seed": int(seed),
              "n_train": int(queries.size)}

    def full_loss(negs):
        if loss == "match":
            value, _, _ = match_loss(w_q, w_i, x_train, y_all, oracle_top,
                                     target_probs)
        else:
            value, _, _ = pair_loss(w_q, w_i, x_train, y_all, oracle_top, negs)
        return value

    def mine_negatives():
        if loss != "pair":
            return None
        model_scores = (x_train @ w_q.T) @ (y_all @ w_i.T).T
        return _hard_negatives(model_scores, oracle_top, k_d)

    negatives = mine_negatives()
    history = [full_loss(negatives)]
    last_good = (w_q.copy(), w_i.copy())
    n_train = queries.size
    for _ in range(epochs):
        if loss == "pair":
            negatives = mine_negatives()
        order = rng.permutation(n_train)
        for start in range(0, n_train, batch_size):
            batch = order[start:start + batch_size]
            if loss == "match":
                value, gw_q, gw_i = match_loss(
                    w_q, w_i, x_train[batch], y_all, oracle_top[batch],
                    target_probs[batch])
            else:
                value, gw_q, gw_i = pair_loss(
                    w_q, w_i, x_train[batch], y_all, oracle_top[batch],
                    negatives[batch])
            w_q -= lr * gw_q
            w_i -= lr * gw_i
            if not (np.isfinite(value) and np.all(np.isfinite(w_q))
                    and np.all(np.isfinite(w_i))):
                checkpoint = LinearDeModel(*last_good, loss_history=history,
                                           config=config)
                raise DivergenceError(
                    f"non-finite {loss} loss after {len(history) - 1} epochs",
                    checkpoint=checkpoint)
        history.append(full_loss(negatives))
        last_good = (w_q.copy(), w_i.copy())
    return LinearDeModel(w_q, w_i, loss_history=history, config=config)


def save_model(model: LinearDeModel, path) -> None:
    """Persist the two weight matrices stacked, plus a key=value sidecar."""
    save_matrix(np.vstack([model.w_query, model.w_item]), path)
    meta = dict(model.config)
    meta["d"] = model.dim
    meta["r"] = model.w_query.shape[1]
    if model.loss_history:
        meta["final_loss"] = repr(model.loss_history[-1])
    with open(f"{path}.meta", "w", encoding="utf-8") as fh:
        for key in sorted(meta):
            fh.write(f"{key}={meta[key]}\n")


def load_model(path) -> LinearDeModel:
    stacked = load_matrix(path)
    if stacked.shape[0] % 2:
        raise SpecError(f"{path}: stacked weight matrix has odd row count")
    half = stacked.shape[0] // 2
    config = {}
    try:
        with open(f"{path}.meta", "r", encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    key, value = line.rstrip("\n").split("=", 1)
                    config[key] = value
    except FileNotFoundError:
        pass
    return LinearDeModel(stacked[:half].copy(), stacked[half:].copy(),
                         config=config)
