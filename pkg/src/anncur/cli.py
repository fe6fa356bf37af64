"""Command-line surface for reproducible indexing/retrieval experiments.

Subcommands: ``gen`` (synthetic score matrices), ``index`` (offline index
build), ``query`` (per-query retrieval CSV), ``eval`` (recall@k_r grid for
the anchor index), ``sweep`` (kr / budget / grid sweeps) and ``compare``
(joined report across all methods).

Every command is deterministic given identical inputs and ``--seed``; the
run seed is expanded into fixed named streams (see :mod:`anncur.rng`) for
synthetic generation, anchor selection, baseline anchors, training and
tuning subsets. Relative paths are resolved against ``--out`` (default:
current directory); exit codes are 0 on success, 1 on runtime/data errors,
2 on usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, evaluate
from .errors import (CapabilityError, DegenerateError, DivergenceError,
                     FormatError, NumericalError, SpecError)
from .index import build_index, load_index, save_index, select_anchors
from .oracle import (KINDS, MatrixOracle, SyntheticSpec, generate, load_matrix,
                     load_matrix_csv, save_matrix)
from .retrieve import BudgetSplit, embed_query, query_under_budget, retrieve_topk
from .rng import (STREAM_ANCHORS, STREAM_BASELINE_ANCHORS, STREAM_QUERY_SUBSET,
                  STREAM_SYNTHETIC, STREAM_TRAINING, derive_seed, generator)

_RUNTIME_ERRORS = (FileNotFoundError, IsADirectoryError, PermissionError,
                   FormatError, SpecError, DegenerateError, CapabilityError,
                   NumericalError, DivergenceError, IndexError)


class _UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}") from exc


def _default_workers() -> int:
    env = os.environ.get("ANNCUR_WORKERS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _resolve(args, path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else Path(args.out) / path


def _add_common(parser):
    parser.add_argument("--out", default=".", help="base directory for all relative paths")
    parser.add_argument("--seed", type=int, default=0, help="run seed; all streams derive from it")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel fan-out (default: $ANNCUR_WORKERS or 1)")


def _add_synthetic_flags(parser, with_defaults=True):
    d = (lambda v: v) if with_defaults else (lambda v: None)
    parser.add_argument("--kind", choices=KINDS, default=d("low_rank_noisy"))
    parser.add_argument("--nq", type=int, default=d(500), help="number of queries")
    parser.add_argument("--ni", type=int, default=d(2000), help="number of items")
    parser.add_argument("--rank", type=int, default=d(20))
    parser.add_argument("--sigma", type=float, default=d(0.05), help="noise level")
    parser.add_argument("--beta", type=float, default=0.0, help="skew weight")
    parser.add_argument("--power", type=float, default=2.0, help="skew exponent")


def _spec_from_args(args) -> SyntheticSpec:
    sigma = args.sigma if args.kind == "low_rank_noisy" else 0.0
    beta = args.beta if args.kind == "skewed" else 0.0
    try:
        return SyntheticSpec(kind=args.kind, n_queries=args.nq, n_items=args.ni,
                             rank=args.rank, noise_sigma=sigma, skew_beta=beta,
                             skew_power=args.power,
                             seed=derive_seed(args.seed, STREAM_SYNTHETIC))
    except SpecError as exc:
        raise _UsageError(str(exc)) from exc


def _load_any_matrix(path):
    """Matrix from the binary table format, or CSV when the suffix says so."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    if path.suffix.lower() == ".csv":
        return load_matrix_csv(path)
    return load_matrix(path)


def _load_oracle(args):
    """Oracle from --matrix (binary or .csv) or from synthetic flags."""
    if getattr(args, "matrix", None):
        return MatrixOracle(_load_any_matrix(_resolve(args, args.matrix)))
    return generate(_spec_from_args(args))


def _workers(args) -> int:
    return args.workers if args.workers else _default_workers()


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = _spec_from_args(args)
    oracle = generate(spec)
    path = _resolve(args, args.file)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(oracle.unmetered.score_rows(np.arange(spec.n_queries)), path)
    evaluate.write_config(Path(f"{path}.meta"), {
        "kind": spec.kind, "n_queries": spec.n_queries, "n_items": spec.n_items,
        "rank": spec.rank, "noise_sigma": spec.noise_sigma,
        "skew_beta": spec.skew_beta, "skew_power": spec.skew_power,
        "seed": args.seed, "synthetic_seed": spec.seed,
    })
    print(f"wrote {path} ({spec.n_queries}x{spec.n_items})")
    return 0


def cmd_index(args) -> int:
    oracle = _load_oracle(args)
    if not 1 <= args.kq <= oracle.n_queries or not 1 <= args.ki <= oracle.n_items:
        raise SpecError(
            f"anchor counts ({args.kq}, {args.ki}) incompatible with matrix "
            f"shape ({oracle.n_queries}, {oracle.n_items})"
        )
    anchors = select_anchors(oracle.n_queries, oracle.n_items, args.kq, args.ki,
                             derive_seed(args.seed, STREAM_ANCHORS))
    index = build_index(oracle, anchors, args.rcond, workers=_workers(args))
    path = _resolve(args, args.file)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, path)
    print(f"build_cost={index.build_cost}")
    print(f"wrote {path}")
    return 0


def cmd_query(args) -> int:
    oracle = _load_oracle(args)
    index_path = _resolve(args, args.index)
    if not index_path.exists():
        raise FileNotFoundError(f"index not found: {index_path}")
    index = load_index(index_path)
    if index.n_items != oracle.n_items:
        raise SpecError(
            f"dimension mismatch: index covers {index.n_items} items, "
            f"matrix has {oracle.n_items}"
        )
    k_i_use = args.ki if args.ki else index.k_i
    if k_i_use < index.k_i:
        # A loaded index has no anchor scores; rebuild them from the matrix so
        # prefix sub-indexes are available. No per-query cost is attributed.
        index.anchor_scores = oracle.unmetered.score_rows(index.anchor_queries)
        index = index.sub_index(k_i_use)
    print("query_id,rank,item_id,approx_score,exact_score,embed_calls,rerank_calls")
    for q in args.query:
        if args.rerank:
            split = BudgetSplit(budget=k_i_use + args.kr, k_i=k_i_use, k_r=args.kr)
            result = query_under_budget(oracle, index, q, split, args.k)
        else:
            embedding = embed_query(oracle, index, q, k_i_use)
            result = retrieve_topk(embedding, index, args.kr)
        for rank, item in enumerate(result.item_ids):
            approx = result.approx_scores[rank]
            exact = (repr(float(result.exact_scores[rank]))
                     if result.exact_scores is not None else "")
            print(f"{q},{rank},{item},{float(approx)!r},{exact},"
                  f"{result.embed_calls},{result.rerank_calls}")
    return 0


def _split_queries(args, oracle):
    """Anchor (training) queries and held-out test queries for eval/sweeps."""
    anchors = select_anchors(oracle.n_queries, oracle.n_items, args.kq, args.ki,
                             derive_seed(args.seed, STREAM_ANCHORS))
    held_out = np.setdiff1d(np.arange(oracle.n_queries, dtype=np.int64),
                            anchors.anchor_queries)
    if args.test_count and args.test_count < held_out.size:
        rng = generator(derive_seed(args.seed, STREAM_QUERY_SUBSET))
        held_out = np.sort(rng.permutation(held_out)[:args.test_count])
    return anchors, held_out


def cmd_eval(args) -> int:
    oracle = _load_oracle(args)
    anchors, test_queries = _split_queries(args, oracle)
    index = build_index(oracle, anchors, args.rcond, workers=_workers(args))
    methods = [evaluate.AnncurMethod(oracle, index)]
    report = evaluate.sweep_recall_vs_kr(oracle, methods, test_queries,
                                         args.k, args.kr, seed=args.seed,
                                         workers=_workers(args))
    report.config.update(_run_config(args, oracle))
    out = _resolve(args, "eval_kr.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    oracle = _load_oracle(args)
    workers = _workers(args)
    if args.mode == "grid":
        table = evaluate.grid_heatmap(
            oracle, args.kq_list, args.ki_list, metric=args.metric,
            k=args.k[0], k_r=args.kr[0],
            seeds=[derive_seed(args.seed, STREAM_ANCHORS) + i
                   for i in range(args.grid_seeds)],
            rcond=args.rcond, workers=workers)
        table.config.update(_run_config(args, oracle))
        out = _resolve(args, "sweep_grid.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        table.write(out)
        print(f"wrote {out}")
        return 0
    anchors, test_queries = _split_queries(args, oracle)
    index = build_index(oracle, anchors, args.rcond, workers=workers)
    if args.mode == "kr":
        methods = [evaluate.AnncurMethod(oracle, index)]
        report = evaluate.sweep_recall_vs_kr(oracle, methods, test_queries,
                                             args.k, args.kr, seed=args.seed,
                                             workers=workers)
    else:
        report = evaluate.sweep_recall_vs_budget(
            oracle, index, test_queries, args.k, args.budgets,
            split_fracs=args.split_grid, seed=args.seed, workers=workers)
    report.config.update(_run_config(args, oracle))
    out = _resolve(args, f"sweep_{args.mode}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    print(f"wrote {out}")
    return 0


def _compare_baselines(args, oracle, anchors):
    """Every baseline the oracle's capabilities support."""
    retrievers = []
    caps = oracle.capabilities
    if caps.item_item_scoring:
        retrievers.append(baselines.fixed_item_index(
            oracle, k_i=args.fixed_ki or anchors.k_i,
            seed=derive_seed(args.seed, STREAM_BASELINE_ANCHORS)))
        retrievers.append(baselines.item_cur_index(
            oracle, k_i_ind=args.itemcur_ind or anchors.k_q,
            k_i_query=anchors.k_i,
            seed=derive_seed(args.seed, STREAM_BASELINE_ANCHORS)))
    if caps.latent_features:
        model = baselines.train_linear_de(
            oracle, anchors.anchor_queries, k_d=args.kd, loss=args.de_loss,
            seed=derive_seed(args.seed, STREAM_TRAINING))
        retrievers.append(model.as_retriever(oracle))
    if args.item_emb and args.query_emb:
        retrievers.append(baselines.precomputed_retriever(
            _load_any_matrix(_resolve(args, args.item_emb)),
            _load_any_matrix(_resolve(args, args.query_emb))))
    elif caps.latent_features:
        # Default precomputed slot: the oracle's own latent vectors.
        retrievers.append(baselines.precomputed_retriever(
            oracle.item_features.T, oracle.query_features))
    return retrievers


def cmd_compare(args) -> int:
    oracle = _load_oracle(args)
    workers = _workers(args)
    anchors, test_queries = _split_queries(args, oracle)
    index = build_index(oracle, anchors, args.rcond, workers=workers)
    retrievers = _compare_baselines(args, oracle, anchors)
    if args.mode == "kr":
        methods = [evaluate.AnncurMethod(oracle, index)]
        methods.extend(evaluate.RetrieverMethod(r) for r in retrievers)
        report = evaluate.sweep_recall_vs_kr(oracle, methods, test_queries,
                                             args.k, args.kr, seed=args.seed,
                                             workers=workers)
    else:
        report = evaluate.sweep_recall_vs_budget(
            oracle, index, test_queries, args.k, args.budgets,
            baselines=retrievers, split_fracs=args.split_grid,
            seed=args.seed, workers=workers)
    report.config.update(_run_config(args, oracle))
    out = _resolve(args, f"compare_{args.mode}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    print(f"wrote {out}")
    return 0


def _run_config(args, oracle) -> dict:
    config = {"cli_seed": args.seed, "n_queries": oracle.n_queries,
              "n_items": oracle.n_items, "workers": _workers(args)}
    for key in ("kind", "nq", "ni", "rank", "sigma", "beta", "power", "kq",
                "ki", "rcond", "matrix", "kd", "de_loss", "test_count"):
        if hasattr(args, key) and getattr(args, key) is not None:
            config[key] = getattr(args, key)
    return config


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anncur",
        description="Retrieval under expensive black-box scorers via "
                    "skeleton decomposition of the score matrix.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic score-matrix file")
    _add_common(p)
    _add_synthetic_flags(p)
    p.add_argument("--file", default="scores.ancm", help="output matrix file")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("index", help="build and save an index")
    _add_common(p)
    _add_synthetic_flags(p)
    p.add_argument("--matrix", help="score-matrix file (overrides synthetic flags)")
    p.add_argument("--kq", type=int, required=True, help="anchor query count")
    p.add_argument("--ki", type=int, required=True, help="anchor item count")
    p.add_argument("--rcond", type=float, default=None)
    p.add_argument("--file", default="index.anci", help="output index file")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="retrieve items for given query ids (CSV to stdout)")
    _add_common(p)
    _add_synthetic_flags(p)
    p.add_argument("--matrix", help="score-matrix file (overrides synthetic flags)")
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--query", type=int, action="append", required=True,
                   help="query id (repeatable)")
    p.add_argument("--ki", type=int, default=None,
                   help="anchor items to use for embedding (default: all)")
    p.add_argument("--kr", type=int, default=100, help="items to retrieve")
    p.add_argument("--rerank", action="store_true",
                   help="re-rank all retrieved items with exact scores")
    p.add_argument("--k", type=int, default=10, help="final top-k when re-ranking")
    p.set_defaults(func=cmd_query)

    def eval_like(name, help_text):
        q = sub.add_parser(name, help=help_text)
        _add_common(q)
        _add_synthetic_flags(q)
        q.add_argument("--matrix", help="score-matrix file (overrides synthetic flags)")
        q.add_argument("--kq", type=int, default=100, help="anchor query count")
        q.add_argument("--ki", type=int, default=80, help="anchor item count")
        q.add_argument("--rcond", type=float, default=None)
        q.add_argument("--k", type=_int_list, default=[1, 10, 50, 100],
                       help="comma-separated k values")
        q.add_argument("--kr", type=_int_list, default=[100, 200, 500],
                       help="comma-separated k_r values")
        q.add_argument("--test-count", type=int, default=None,
                       help="cap on held-out test queries (seeded subsample)")
        return q

    p = eval_like("eval", "recall@k_r grid for the anchor index")
    p.set_defaults(func=cmd_eval)

    p = eval_like("sweep", "kr / budget / anchor-grid sweeps")
    p.add_argument("--mode", choices=("kr", "budget", "grid"), default="budget")
    p.add_argument("--budgets", type=_int_list, default=[50, 100, 200])
    p.add_argument("--split-grid", type=_float_list,
                   default=list(evaluate.DEFAULT_SPLIT_FRACS),
                   help="budget fractions allocated to anchors")
    p.add_argument("--kq-list", type=_int_list, default=[40, 80, 120])
    p.add_argument("--ki-list", type=_int_list, default=[30, 50, 70])
    p.add_argument("--metric", choices=("recall", "frob_error"), default="recall")
    p.add_argument("--grid-seeds", type=int, default=1,
                   help="seeds per grid cell (mode=grid)")
    p.set_defaults(func=cmd_sweep)

    p = eval_like("compare", "joined report across all supported methods")
    p.add_argument("--mode", choices=("kr", "budget"), default="budget")
    p.add_argument("--budgets", type=_int_list, default=[50, 100, 200])
    p.add_argument("--split-grid", type=_float_list,
                   default=list(evaluate.DEFAULT_SPLIT_FRACS))
    p.add_argument("--fixed-ki", type=int, default=None,
                   help="anchor items for the fixed-item baseline")
    p.add_argument("--itemcur-ind", type=int, default=None,
                   help="indexing anchor items for the item-side skeleton baseline")
    p.add_argument("--kd", type=int, default=50,
                   help="oracle-top depth for dual-encoder distillation")
    p.add_argument("--de-loss", choices=("match", "pair"), default="match")
    p.add_argument("--item-emb", help="precomputed item embeddings (d x n_items)")
    p.add_argument("--query-emb", help="precomputed query embeddings (n_queries x d)")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
