"""Black-box pairwise scorers with exact call accounting.

Every oracle scores (query, item) id pairs deterministically and charges a
thread-safe ledger one unit per pair evaluation (a batch of B pairs charges
B). Ground-truth and analysis code goes through the ``unmetered`` view of the
same oracle, which returns identical values but never touches the ledger, so
method-under-test costs stay exact.

Synthetic oracles materialize their score matrix once at construction; all
scoring is then table lookup, which makes determinism and batch-equals-loop
semantics trivial.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, FormatError, SpecError
from .linalg import as_matrix
from .rng import generator

MATRIX_MAGIC = b"ANCM"
MATRIX_VERSION = 1

KINDS = ("low_rank", "low_rank_noisy", "skewed", "featured")


class CallLedger:
    """Monotone counter of scoring-function evaluations. Thread-safe."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        with self._lock:
            self._count += int(n)

    @property
    def count(self) -> int:
        return self._count


@dataclass(frozen=True)
class Capabilities:
    item_item_scoring: bool = False
    latent_features: bool = False


def _lock_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class ScoreOracle:
    """Deterministic scorer over id pairs, backed by a materialized matrix."""

    def __init__(self, matrix, *, item_matrix=None, query_features=None,
                 item_features=None):
        m = as_matrix(matrix, "score matrix")
        self._matrix = _lock_readonly(m.copy())
        self.n_queries, self.n_items = m.shape
        self._item_matrix = None
        if item_matrix is not None:
            im = as_matrix(item_matrix, "item-item matrix")
            if im.shape != (self.n_items, self.n_items):
                raise SpecError(
                    f"item-item matrix must be {self.n_items}x{self.n_items}, "
                    f"got {im.shape}"
                )
            self._item_matrix = _lock_readonly(im.copy())
        self._query_features = None
        self._item_features = None
        if (query_features is None) != (item_features is None):
            raise SpecError("query and item features must be given together")
        if query_features is not None:
            qf = as_matrix(query_features, "query features")
            itf = as_matrix(item_features, "item features")
            if qf.shape[0] != self.n_queries or itf.shape[0] != self.n_items:
                raise SpecError("feature row counts must match matrix shape")
            if qf.shape[1] != itf.shape[1]:
                raise SpecError("query/item feature dims differ")
            self._query_features = _lock_readonly(qf.copy())
            self._item_features = _lock_readonly(itf.copy())
        self.ledger = CallLedger()
        self._gram_lock = threading.Lock()

    # -- metadata -----------------------------------------------------------

    @property
    def capabilities(self) -> Capabilities:
        return Capabilities(
            item_item_scoring=(self._item_matrix is not None
                               or self._item_features is not None),
            latent_features=self._query_features is not None,
        )

    @property
    def call_count(self) -> int:
        """Exact number of pair evaluations paid for so far."""
        return self.ledger.count

    @property
    def query_features(self) -> np.ndarray:
        """Latent query vectors, one row per query (featured oracles only)."""
        if self._query_features is None:
            raise CapabilityError("oracle does not expose latent features")
        return self._query_features

    @property
    def item_features(self) -> np.ndarray:
        if self._item_features is None:
            raise CapabilityError("oracle does not expose latent features")
        return self._item_features

    @property
    def unmetered(self) -> "UnmeteredView":
        """Ledger-exempt read channel (ground truth and analysis only)."""
        return UnmeteredView(self)

    # -- validation ---------------------------------------------------------

    def _check_query(self, q) -> int:
        q = int(q)
        if not 0 <= q < self.n_queries:
            raise IndexError(f"query id {q} out of range [0, {self.n_queries})")
        return q

    def _check_item(self, i) -> int:
        i = int(i)
        if not 0 <= i < self.n_items:
            raise IndexError(f"item id {i} out of range [0, {self.n_items})")
        return i

    def _check_id_arrays(self, a, b, n_a, n_b):
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        b = np.atleast_1d(np.asarray(b, dtype=np.int64))
        if a.shape != b.shape or a.ndim != 1:
            raise SpecError("batch id arrays must be 1-D with equal length")
        if a.size and (a.min() < 0 or a.max() >= n_a):
            raise IndexError(f"query/item ids out of range [0, {n_a})")
        if b.size and (b.min() < 0 or b.max() >= n_b):
            raise IndexError(f"query/item ids out of range [0, {n_b})")
        return a, b

    def _item_gram(self) -> np.ndarray:
        if self._item_matrix is None:
            if self._item_features is None:
                raise CapabilityError("oracle does not support item-item scoring")
            with self._gram_lock:
                if self._item_matrix is None:
                    y = self._item_features
                    self._item_matrix = _lock_readonly(y @ y.T)
        return self._item_matrix

    # -- metered scoring ----------------------------------------------------

    def score(self, q, i) -> float:
        q = self._check_query(q)
        i = self._check_item(i)
        self.ledger.add(1)
        return float(self._matrix[q, i])

    def score_batch(self, query_ids, item_ids) -> np.ndarray:
        qs, iis = self._check_id_arrays(query_ids, item_ids,
                                        self.n_queries, self.n_items)
        self.ledger.add(qs.size)
        return self._matrix[qs, iis]

    def score_row(self, q) -> np.ndarray:
        """All item scores for one query; charges n_items ledger calls."""
        q = self._check_query(q)
        self.ledger.add(self.n_items)
        return self._matrix[q]

    def score_items(self, i, j) -> float:
        gram = self._item_gram()
        i = self._check_item(i)
        j = self._check_item(j)
        self.ledger.add(1)
        return float(gram[i, j])

    def score_items_batch(self, item_ids_a, item_ids_b) -> np.ndarray:
        gram = self._item_gram()
        a, b = self._check_id_arrays(item_ids_a, item_ids_b,
                                     self.n_items, self.n_items)
        self.ledger.add(a.size)
        return gram[a, b]


class UnmeteredView:
    """Same scores as the wrapped oracle, but no ledger charges.

    Use only for ground truth and offline analysis; any path whose cost is
    being measured must call the metered oracle instead.
    """

    def __init__(self, oracle: ScoreOracle):
        self._oracle = oracle

    @property
    def n_queries(self) -> int:
        return self._oracle.n_queries

    @property
    def n_items(self) -> int:
        return self._oracle.n_items

    @property
    def capabilities(self) -> Capabilities:
        return self._oracle.capabilities

    def score(self, q, i) -> float:
        o = self._oracle
        return float(o._matrix[o._check_query(q), o._check_item(i)])

    def score_batch(self, query_ids, item_ids) -> np.ndarray:
        o = self._oracle
        qs, iis = o._check_id_arrays(query_ids, item_ids, o.n_queries, o.n_items)
        return o._matrix[qs, iis]

    def score_row(self, q) -> np.ndarray:
        o = self._oracle
        return o._matrix[o._check_query(q)]

    def score_rows(self, query_ids) -> np.ndarray:
        o = self._oracle
        qs = np.atleast_1d(np.asarray(query_ids, dtype=np.int64))
        if qs.size and (qs.min() < 0 or qs.max() >= o.n_queries):
            raise IndexError(f"query ids out of range [0, {o.n_queries})")
        return o._matrix[qs]

    def score_items(self, i, j) -> float:
        o = self._oracle
        gram = o._item_gram()
        return float(gram[o._check_item(i), o._check_item(j)])

    def score_items_batch(self, item_ids_a, item_ids_b) -> np.ndarray:
        o = self._oracle
        gram = o._item_gram()
        a, b = o._check_id_arrays(item_ids_a, item_ids_b, o.n_items, o.n_items)
        return gram[a, b]


class MatrixOracle(ScoreOracle):
    """Oracle over a precomputed score table; scoring is pure lookup."""

    @classmethod
    def from_file(cls, path, item_matrix_path=None) -> "MatrixOracle":
        item = load_matrix(item_matrix_path) if item_matrix_path else None
        return cls(load_matrix(path), item_matrix=item)

    @classmethod
    def from_csv(cls, path) -> "MatrixOracle":
        return cls(load_matrix_csv(path))


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a reproducible synthetic oracle.

    kind:
      low_rank        exact rank-``rank`` matrix with unit-variance entries
      low_rank_noisy  low_rank plus i.i.d. N(0, noise_sigma^2) noise
      skewed          entrywise x + skew_beta * max(0, x)**skew_power applied
                      to a low_rank base (raises the numerical rank)
      featured        low_rank realized as exact inner products of exposed
                      per-query/per-item latent vectors; supports item-item
                      scoring
    """

    kind: str
    n_queries: int
    n_items: int
    rank: int
    noise_sigma: float = 0.0
    skew_beta: float = 0.0
    skew_power: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.n_queries < 1 or self.n_items < 1:
            raise SpecError("n_queries and n_items must be positive")
        if not 1 <= self.rank <= min(self.n_queries, self.n_items):
            raise SpecError(
                f"rank must be in [1, min(n_queries, n_items)]; got {self.rank}"
            )
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be nonnegative")
        if self.noise_sigma > 0 and self.kind != "low_rank_noisy":
            raise SpecError("noise_sigma > 0 is only valid for kind=low_rank_noisy")
        if self.skew_beta < 0:
            raise SpecError("skew_beta must be nonnegative")
        if self.skew_beta > 0 and self.kind != "skewed":
            raise SpecError("skew_beta > 0 is only valid for kind=skewed")
        if self.skew_power < 1:
            raise SpecError("skew_power must be >= 1")

    @classmethod
    def noisy_default(cls, seed: int = 0, n_queries: int = 500,
                      n_items: int = 2000) -> "SyntheticSpec":
        """Default noisy benchmark scenario (rank 20, sigma 0.05)."""
        return cls(kind="low_rank_noisy", n_queries=n_queries, n_items=n_items,
                   rank=20, noise_sigma=0.05, seed=seed)

    @classmethod
    def featured_default(cls, seed: int = 0, n_queries: int = 300,
                         n_items: int = 1000, rank: int = 5) -> "SyntheticSpec":
        """Default featured scenario for dual-encoder baselines."""
        return cls(kind="featured", n_queries=n_queries, n_items=n_items,
                   rank=rank, seed=seed)


class SyntheticOracle(ScoreOracle):
    """Oracle materialized from a :class:`SyntheticSpec`."""

    def __init__(self, matrix, spec: SyntheticSpec | None, *,
                 query_features=None, item_features=None):
        super().__init__(matrix, query_features=query_features,
                         item_features=item_features)
        self.spec = spec

    @classmethod
    def from_features(cls, query_features, item_features,
                      spec: SyntheticSpec | None = None) -> "SyntheticOracle":
        """Featured oracle with explicit latent vectors (one row per entity)."""
        qf = as_matrix(query_features, "query features")
        itf = as_matrix(item_features, "item features")
        return cls(qf @ itf.T, spec, query_features=qf, item_features=itf)


def skew_transform(x: np.ndarray, beta: float, power: float) -> np.ndarray:
    """Entrywise x + beta * max(0, x)**power; identity when beta == 0."""
    return x + beta * np.maximum(x, 0.0) ** power


def generate(spec: SyntheticSpec) -> SyntheticOracle:
    """Materialize the oracle for a spec. Identical spec -> identical bits.

    Draw order is fixed: with PCG64(seed), draw the left factor of shape
    (n_queries, rank) row-major, then the right factor (rank, n_items), then
    (for low_rank_noisy) the noise matrix. The base is the factor product
    scaled by 1/sqrt(rank) so entries have unit variance at every rank.
    """
    rng = generator(spec.seed)
    left = rng.standard_normal((spec.n_queries, spec.rank))
    right = rng.standard_normal((spec.rank, spec.n_items))
    if spec.kind == "featured":
        scale = spec.rank ** -0.25
        qf = left * scale
        itf = right.T * scale
        return SyntheticOracle(qf @ itf.T, spec, query_features=qf,
                               item_features=itf)
    base = (left @ right) / np.sqrt(spec.rank)
    if spec.kind == "low_rank":
        m = base
    elif spec.kind == "low_rank_noisy":
        m = base
        if spec.noise_sigma > 0:
            m = base + spec.noise_sigma * rng.standard_normal(base.shape)
    else:  # skewed
        m = skew_transform(base, spec.skew_beta, spec.skew_power)
    return SyntheticOracle(m, spec)


# -- score-matrix files ------------------------------------------------------

_HEADER = struct.Struct("<4sIQQ")


def save_matrix(matrix, path) -> None:
    """Write a dense score matrix in the binary little-endian table format."""
    m = as_matrix(matrix, "matrix")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`save_matrix`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, n_rows, n_cols = _HEADER.unpack(head)
        if magic != MATRIX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != MATRIX_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = n_rows * n_cols * 8
    if len(payload) != expected:
        raise FormatError(
            f"{path}: expected {expected} payload bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(n_rows, n_cols)
    return as_matrix(data, str(path))


def load_matrix_csv(path) -> np.ndarray:
    """Read a score matrix from CSV.

    Accepts either a ``q,i,score`` triplet file (header required, complete
    coverage of the grid required) or a dense numeric grid with no header.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip().replace(" ", "")
    if first.lower() == "q,i,score":
        trip = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if trip.shape[1] != 3:
            raise FormatError(f"{path}: triplet rows must have 3 columns")
        qs = trip[:, 0].astype(np.int64)
        iis = trip[:, 1].astype(np.int64)
        if qs.min() < 0 or iis.min() < 0:
            raise FormatError(f"{path}: negative ids")
        n_q, n_i = int(qs.max()) + 1, int(iis.max()) + 1
        if trip.shape[0] != n_q * n_i:
            raise FormatError(
                f"{path}: grid is {n_q}x{n_i} but only {trip.shape[0]} rows given"
            )
        flat = qs * n_i + iis
        if np.unique(flat).size != flat.size:
            raise FormatError(f"{path}: duplicate (q,i) rows")
        m = np.empty((n_q, n_i))
        m[qs, iis] = trip[:, 2]
        return as_matrix(m, str(path))
    grid = np.loadtxt(path, delimiter=",", ndmin=2)
    return as_matrix(grid, str(path))
