"""Ground truth, recall metrics, sweeps and CSV reports.

Ground truth is computed by brute force on the oracle's ledger-exempt
channel, so method-under-test call counts never include it. Sweeps likewise
read anchor scores through the exempt channel and report per-query costs
analytically (embedding calls + re-rank pool size); the metered pipeline in
:mod:`anncur.retrieve` is what enforces those costs call-for-call.

Recall here is Top-k-Recall@k_r: the percentage of the true top-k (exact
scores) present among the k_r retrieved candidates. Re-ranking the k_r
candidates with exact scores can never evict a true top-k member, so this is
also the recall of the final re-ranked top-k under a budget.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecError
from .index import CurIndex, build_index, select_anchors
from .retrieve import top_ids
from .rng import generator

REPORT_HEADER = ("method,k,kr_or_budget,split_ki,split_kr,"
                 "recall_mean,recall_stderr,n_queries,seed")
HEATMAP_HEADER = "k_q,k_i,metric,value_mean,value_stderr,n_seeds"
DEFAULT_SPLIT_FRACS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def brute_force_topk(oracle, q: int, k: int):
    """Exact top-k items for a query, ties toward the smaller id.

    Runs on the ledger-exempt channel (one full score row per call); use
    :func:`anncur.retrieve.rerank` when the calls must be paid for.
    """
    if not 1 <= k <= oracle.n_items:
        raise SpecError(f"k must be in [1, {oracle.n_items}], got {k}")
    row = oracle.unmetered.score_row(q)
    ids = top_ids(row, k)
    return ids, row[ids]


@dataclass
class GroundTruth:
    """True top-k ids and scores per test query, up to k_max."""

    k_max: int
    ids: dict[int, np.ndarray]
    scores: dict[int, np.ndarray]

    def top(self, q: int, k: int) -> np.ndarray:
        if k > self.k_max:
            raise SpecError(f"ground truth holds top-{self.k_max}, asked for {k}")
        return self.ids[q][:k]


def compute_ground_truth(oracle, queries, k_max: int,
                         workers: int = 1) -> GroundTruth:
    """Brute-force true top-k_max for every query; ledger-exempt."""
    queries = [int(q) for q in queries]

    def one(q):
        ids, scores = brute_force_topk(oracle, q, k_max)
        return q, ids, scores

    results = _map(one, queries, workers)
    return GroundTruth(k_max=k_max,
                       ids={q: ids for q, ids, _ in results},
                       scores={q: s for q, _, s in results})


def recall_at(retrieved, truth) -> float:
    """Percentage of the true top-k found among the retrieved ids."""
    retrieved = np.atleast_1d(np.asarray(retrieved, dtype=np.int64))
    truth = np.atleast_1d(np.asarray(truth, dtype=np.int64))
    if truth.size == 0:
        raise SpecError("truth id list is empty")
    if np.unique(retrieved).size != retrieved.size:
        raise SpecError("retrieved ids contain duplicates")
    if np.unique(truth).size != truth.size:
        raise SpecError("truth ids contain duplicates")
    hits = np.intersect1d(retrieved, truth, assume_unique=True).size
    return 100.0 * hits / truth.size


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _mean_stderr(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / np.sqrt(arr.size))


# -- method adapters ----------------------------------------------------------

class AnncurMethod:
    """Sweep adapter for the anchor-index retriever.

    Anchor-score rows for test queries are read once through the
    ledger-exempt channel and cached, so split grids do not multiply-charge
    the oracle; the per-query cost is reported analytically as the anchor
    count in use.
    """

    def __init__(self, oracle, index: CurIndex, k_i_use: int | None = None,
                 name: str | None = None):
        self.oracle = oracle
        self.index = index
        self.k_i_use = index.k_i if k_i_use is None else int(k_i_use)
        if not 1 <= self.k_i_use <= index.k_i:
            raise SpecError(f"k_i_use must be in [1, {index.k_i}]")
        if name is None:
            name = ("anncur" if self.k_i_use == index.k_i
                    else f"anncur_ki{self.k_i_use}")
        self.name = name
        self._rows: dict[int, np.ndarray] = {}

    @property
    def cost_per_query(self) -> int:
        return self.k_i_use

    def anchor_row(self, q: int) -> np.ndarray:
        row = self._rows.get(q)
        if row is None:
            row = self.oracle.unmetered.score_batch(
                np.full(self.index.k_i, q, dtype=np.int64),
                self.index.anchor_items)
            self._rows[q] = row
        return row

    def candidate_ids(self, q: int, k_r: int,
                      k_i_use: int | None = None) -> np.ndarray:
        kiu = self.k_i_use if k_i_use is None else k_i_use
        sub = self.index.sub_index(kiu)
        scores = self.anchor_row(q)[:kiu] @ sub.item_embeddings
        return top_ids(scores, k_r)


class RetrieverMethod:
    """Sweep adapter for an :class:`~anncur.baselines.EmbeddingRetriever`."""

    def __init__(self, retriever):
        self.retriever = retriever
        self.name = retriever.name

    @property
    def cost_per_query(self) -> int:
        return self.retriever.cost_per_query

    def candidate_ids(self, q: int, k_r: int) -> np.ndarray:
        e = self.retriever.embed(q, metered=False)
        return top_ids(e @ self.retriever.item_embeddings, k_r)


# -- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    method: str
    k: int
    x: int                 # k_r or budget, depending on report mode
    split_ki: int
    split_kr: int
    recall_mean: float
    recall_stderr: float
    n_queries: int
    seed: int

    def to_csv(self) -> str:
        return (f"{self.method},{self.k},{self.x},{self.split_ki},"
                f"{self.split_kr},{self.recall_mean:.6f},"
                f"{self.recall_stderr:.6f},{self.n_queries},{self.seed}")


@dataclass
class RecallReport:
    mode: str                       # "kr" or "budget"
    rows: list[ReportRow]
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        lines.extend(row.to_csv() for row in self.rows)
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        write_config(path.with_suffix(".cfg"), self.config)


def write_config(path, config: dict) -> None:
    """UTF-8 key=value snapshot of every parameter of a run."""
    lines = [f"{key}={config[key]}" for key in sorted(config)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_queries(test_queries):
    queries = [int(q) for q in test_queries]
    if not queries:
        raise SpecError("test query set is empty")
    if len(set(queries)) != len(queries):
        raise SpecError("test query ids contain duplicates")
    return queries


# -- sweeps -------------------------------------------------------------------

def sweep_recall_vs_kr(oracle, methods, test_queries, k_list, kr_list, *,
                       seed: int = 0, workers: int = 1) -> RecallReport:
    """Recall grid over (k, k_r) for each method, averaged over test queries.

    Candidates are retrieved once per query at max(kr_list) and prefixes are
    scored for smaller k_r, so recall is exactly monotone in k_r.
    """
    queries = _check_queries(test_queries)
    k_list = sorted(int(k) for k in k_list)
    kr_list = sorted(int(kr) for kr in kr_list)
    if not k_list or not kr_list:
        raise SpecError("k_list and kr_list must be non-empty")
    if max(k_list) > min(kr_list):
        raise SpecError(
            f"every k must be <= every k_r (max k {max(k_list)} > "
            f"min k_r {min(kr_list)})"
        )
    truth = compute_ground_truth(oracle, queries, max(k_list), workers)
    kr_max = max(kr_list)
    rows = []
    for method in methods:
        cands = dict(_map(lambda q: (q, method.candidate_ids(q, kr_max)),
                          queries, workers))
        for k in k_list:
            for k_r in kr_list:
                recalls = [recall_at(cands[q][:k_r], truth.top(q, k))
                           for q in queries]
                mean, stderr = _mean_stderr(recalls)
                rows.append(ReportRow(method.name, k, k_r,
                                      method.cost_per_query, k_r, mean,
                                      stderr, len(queries), seed))
    config = {"mode": "kr", "k_list": k_list, "kr_list": kr_list,
              "n_queries": len(queries), "seed": seed,
              "methods": [m.name for m in methods]}
    return RecallReport(mode="kr", rows=rows, config=config)


def candidate_splits(budget: int, max_k_i: int,
                     fracs=DEFAULT_SPLIT_FRACS) -> list[tuple[int, int]]:
    """Feasible (k_i, k_r) splits of a budget from a fraction grid.

    Always includes the extreme feasible anchors-side values k_i = 1 and
    k_i = budget - 1 so tuning can reject them explicitly.
    """
    if budget < 2:
        raise SpecError(f"budget must be >= 2 to split, got {budget}")
    k_i_values = {1, min(budget - 1, max_k_i)}
    for frac in fracs:
        k_i = int(round(frac * budget))
        k_i = max(1, min(k_i, budget - 1, max_k_i))
        k_i_values.add(k_i)
    return [(k_i, budget - k_i) for k_i in sorted(k_i_values)]


def sweep_recall_vs_budget(oracle, index: CurIndex, test_queries, k_list,
                           budgets, *, baselines=(),
                           split_fracs=DEFAULT_SPLIT_FRACS,
                           tune_frac: float = 0.1, seed: int = 0,
                           workers: int = 1) -> RecallReport:
    """Recall under fixed per-query call budgets.

    For the anchor-index method every feasible split of each budget is
    evaluated on a held-out tuning subset of the test queries (``tune_frac``,
    seeded) and the best split's recall on the remaining queries is reported.
    Baselines spend their fixed embedding cost and put the entire remaining
    budget into the re-rank pool.
    """
    queries = _check_queries(test_queries)
    k_list = sorted(int(k) for k in k_list)
    budgets = sorted(int(b) for b in budgets)
    if not k_list or not budgets:
        raise SpecError("k_list and budgets must be non-empty")
    if budgets[0] < 2:
        raise SpecError(f"budget must be >= 2, got {budgets[0]}")
    perm = generator(seed).permutation(len(queries))
    n_tune = max(1, int(round(tune_frac * len(queries))))
    if n_tune >= len(queries):
        raise SpecError("not enough test queries to hold out a tuning subset")
    tune_queries = sorted(queries[i] for i in perm[:n_tune])
    report_queries = sorted(queries[i] for i in perm[n_tune:])
    truth = compute_ground_truth(oracle, queries, max(k_list), workers)
    anncur = AnncurMethod(oracle, index)
    rows = []
    chosen: dict[tuple[int, int], tuple[int, int]] = {}
    for budget in budgets:
        splits = candidate_splits(budget, index.k_i, split_fracs)
        split_cands: dict[tuple[int, int], dict[int, np.ndarray]] = {}

        def cands_for(split, qs):
            k_i, k_r = split
            cache = split_cands.setdefault(split, {})
            missing = [q for q in qs if q not in cache]
            for q, ids in _map(
                    lambda q: (q, anncur.candidate_ids(q, k_r, k_i_use=k_i)),
                    missing, workers):
                cache[q] = ids
            return cache

        for k in k_list:
            best_split, best_recall = None, -1.0
            for split in splits:
                cache = cands_for(split, tune_queries)
                mean = float(np.mean([recall_at(cache[q], truth.top(q, k))
                                      for q in tune_queries]))
                if mean > best_recall:
                    best_split, best_recall = split, mean
            k_i, k_r = best_split
            chosen[(budget, k)] = best_split
            cache = cands_for(best_split, report_queries)
            recalls = [recall_at(cache[q], truth.top(q, k))
                       for q in report_queries]
            mean, stderr = _mean_stderr(recalls)
            rows.append(ReportRow("anncur", k, budget, k_i, k_r, mean, stderr,
                                  len(report_queries), seed))
        for retriever in baselines:
            method = RetrieverMethod(retriever)
            k_r = budget - method.cost_per_query
            for k in k_list:
                if k_r < 1:
                    warnings.warn(
                        f"{method.name}: budget {budget} cannot cover the "
                        f"embedding cost {method.cost_per_query}", stacklevel=2)
                    rows.append(ReportRow(method.name, k, budget,
                                          method.cost_per_query, 0, 0.0, 0.0,
                                          len(report_queries), seed))
                    continue
                if k_r < k:
                    warnings.warn(
                        f"{method.name}: k_r={k_r} < k={k} under budget "
                        f"{budget}; recall is capped below 100", stacklevel=2)
                cands = dict(_map(
                    lambda q: (q, method.candidate_ids(q, k_r)),
                    report_queries, workers))
                recalls = [recall_at(cands[q], truth.top(q, k))
                           for q in report_queries]
                mean, stderr = _mean_stderr(recalls)
                rows.append(ReportRow(method.name, k, budget,
                                      method.cost_per_query, k_r, mean,
                                      stderr, len(report_queries), seed))
    config = {"mode": "budget", "k_list": k_list, "budgets": budgets,
              "split_fracs": list(split_fracs), "tune_frac": tune_frac,
              "n_tune": len(tune_queries), "n_report": len(report_queries),
              "seed": seed, "index_k_q": index.k_q, "index_k_i": index.k_i,
              "best_splits": {f"{b}:{k}": v for (b, k), v in chosen.items()},
              "baselines": [r.name for r in baselines]}
    return RecallReport(mode="budget", rows=rows, config=config)


# -- anchor-grid analysis ------------------------------------------------------

@dataclass(frozen=True)
class HeatmapCell:
    k_q: int
    k_i: int
    metric: str
    value_mean: float
    value_stderr: float
    n_seeds: int

    def to_csv(self) -> str:
        return (f"{self.k_q},{self.k_i},{self.metric},{self.value_mean:.6f},"
                f"{self.value_stderr:.6f},{self.n_seeds}")


@dataclass
class HeatmapTable:
    metric: str
    cells: list[HeatmapCell]
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [HEATMAP_HEADER]
        lines.extend(cell.to_csv() for cell in self.cells)
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        write_config(path.with_suffix(".cfg"), self.config)

    def value(self, k_q: int, k_i: int) -> float:
        for cell in self.cells:
            if cell.k_q == k_q and cell.k_i == k_i:
                return cell.value_mean
        raise KeyError((k_q, k_i))


def _heldout_frob_error(oracle, index: CurIndex, held_out) -> float:
    """Relative Frobenius error of the approximation on non-anchor rows."""
    view = oracle.unmetered
    true_rows = view.score_rows(held_out)
    approx = true_rows[:, index.anchor_items] @ index.item_embeddings
    diff = float(np.linalg.norm(true_rows - approx))
    return diff / float(np.linalg.norm(true_rows))


def _heldout_recall(oracle, index: CurIndex, held_out, k: int, k_r: int,
                    truth: GroundTruth, workers: int) -> float:
    method = AnncurMethod(oracle, index)
    recalls = _map(
        lambda q: recall_at(method.candidate_ids(q, k_r), truth.top(q, k)),
        held_out, workers)
    return float(np.mean(recalls))


def grid_heatmap(oracle, k_q_list, k_i_list, *, metric: str = "recall",
                 k: int = 10, k_r: int = 100, seeds=(0,),
                 rcond: float | None = None, workers: int = 1) -> HeatmapTable:
    """Evaluate anchor-count combinations on held-out (non-anchor) queries.

    For each (k_q, k_i) cell and each seed, anchors are drawn, the index is
    built, and the chosen metric (Top-k-Recall@k_r or relative Frobenius
    error of the reconstructed held-out rows) is averaged over the non-anchor
    queries; the cell reports mean and standard error over seeds.
    """
    k_q_list = sorted(int(v) for v in k_q_list)
    k_i_list = sorted(int(v) for v in k_i_list)
    seeds = [int(s) for s in seeds]
    if not k_q_list or not k_i_list or not seeds:
        raise SpecError("grid lists and seeds must be non-empty")
    if metric not in ("recall", "frob_error"):
        raise SpecError(f"metric must be 'recall' or 'frob_error', got {metric!r}")
    if max(k_q_list) >= oracle.n_queries:
        raise SpecError("k_q must leave at least one held-out query")
    cells = []
    for k_q in k_q_list:
        for k_i in k_i_list:
            values = []
            for seed in seeds:
                anchors = select_anchors(oracle.n_queries, oracle.n_items,
                                         k_q, k_i, seed)
                index = build_index(oracle, anchors, rcond, workers=workers)
                held_out = np.setdiff1d(
                    np.arange(oracle.n_queries, dtype=np.int64),
                    anchors.anchor_queries)
                if metric == "frob_error":
                    values.append(_heldout_frob_error(oracle, index, held_out))
                else:
                    truth = compute_ground_truth(oracle, held_out, k, workers)
                    values.append(_heldout_recall(oracle, index, held_out, k,
                                                  k_r, truth, workers))
            mean, stderr = _mean_stderr(values)
            cells.append(HeatmapCell(k_q, k_i, metric, mean, stderr,
                                     len(seeds)))
    config = {"metric": metric, "k": k, "k_r": k_r,
              "k_q_list": k_q_list, "k_i_list": k_i_list, "seeds": seeds,
              "n_queries": oracle.n_queries, "n_items": oracle.n_items}
    return HeatmapTable(metric=metric, cells=cells, config=config)
