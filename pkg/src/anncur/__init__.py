"""Retrieval under expensive black-box pairwise scorers.

Items are indexed offline from anchor-query score rows via a skeleton
(CUR-style) decomposition; test queries embed themselves with a handful of
scorer calls against anchor items and retrieve by exact inner-product search,
optionally re-ranking with exact scores under a per-query call budget.
"""

from .baselines import (EmbeddingRetriever, LinearDeModel, fixed_item_index,
                        init_linear_de, item_cur_index, precomputed_retriever,
                        retrieve_with, train_linear_de)
from .errors import (CapabilityError, DegenerateError, DivergenceError,
                     FormatError, NumericalError, SpecError,
                     SquareAnchorWarning)
from .evaluate import (GroundTruth, HeatmapTable, RecallReport,
                       brute_force_topk, compute_ground_truth, grid_heatmap,
                       recall_at, sweep_recall_vs_budget, sweep_recall_vs_kr)
from .index import (AnchorSet, CurIndex, build_index, load_index, save_index,
                    select_anchors)
from .linalg import (cur_skeleton, frob_rel_error, numerical_rank,
                     optimal_joining_matrix, pseudo_inverse)
from .oracle import (Capabilities, MatrixOracle, ScoreOracle, SyntheticOracle,
                     SyntheticSpec, generate, load_matrix, load_matrix_csv,
                     save_matrix)
from .retrieve import (BudgetSplit, QueryEmbedding, RetrievalResult,
                       approx_scores, embed_query, query_under_budget, rerank,
                       retrieve_topk, top_ids)

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "BudgetSplit", "Capabilities", "CapabilityError", "CurIndex",
    "DegenerateError", "DivergenceError", "EmbeddingRetriever", "FormatError",
    "GroundTruth", "HeatmapTable", "LinearDeModel", "MatrixOracle",
    "NumericalError", "QueryEmbedding", "RecallReport", "RetrievalResult",
    "ScoreOracle", "SpecError", "SquareAnchorWarning", "SyntheticOracle",
    "SyntheticSpec", "approx_scores", "brute_force_topk", "build_index",
    "compute_ground_truth", "cur_skeleton", "embed_query", "fixed_item_index",
    "frob_rel_error", "generate", "grid_heatmap", "item_cur_index",
    "init_linear_de", "load_index", "load_matrix", "load_matrix_csv",
    "numerical_rank",
    "optimal_joining_matrix", "precomputed_retriever", "pseudo_inverse",
    "query_under_budget", "recall_at", "rerank", "retrieve_topk",
    "retrieve_with", "save_index", "save_matrix", "select_anchors",
    "sweep_recall_vs_budget", "sweep_recall_vs_kr", "top_ids",
    "train_linear_de",
]
