"""Dense linear-algebra kernels for skeleton decompositions.

Matrices are plain 2-D float64 C-contiguous numpy arrays throughout the
package; :func:`as_matrix` is the validating coercion used at every entry
point. Singular-value cutoffs follow the usual relative convention: values
``<= rcond * sigma_max`` are treated as zero.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateError, NumericalError, SpecError

__all__ = [
    "as_matrix",
    "check_ids",
    "default_rcond",
    "svd",
    "pseudo_inverse",
    "numerical_rank",
    "frob_rel_error",
    "cur_skeleton",
    "optimal_joining_matrix",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 C-order array or raise SpecError."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise SpecError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise SpecError(f"{name} contains non-finite entries")
    return m


def check_ids(ids, n: int, name: str = "ids") -> np.ndarray:
    """Validate a non-empty list of distinct in-range ids."""
    arr = np.atleast_1d(np.asarray(ids, dtype=np.int64))
    if arr.ndim != 1 or arr.size == 0:
        raise SpecError(f"{name} must be a non-empty 1-D id list")
    if np.unique(arr).size != arr.size:
        raise SpecError(f"{name} contains duplicate ids")
    if arr.min() < 0 or arr.max() >= n:
        raise SpecError(f"{name} has ids outside [0, {n})")
    return arr


def default_rcond(shape) -> float:
    """Standard SVD cutoff: machine epsilon times the larger dimension."""
    return float(np.finfo(np.float64).eps * max(shape))


def _resolve_rcond(rcond, shape) -> float:
    if rcond is None:
        return default_rcond(shape)
    rcond = float(rcond)
    if rcond < 0:
        raise SpecError("rcond must be nonnegative")
    return rcond


def svd(a: np.ndarray):
    """Thin SVD with a fixed sign convention.

    The first nonzero entry of each left singular vector is made positive
    (the matching right vector is flipped too), so identical input bits give
    identical factor bits and persisted artifacts are reproducible.
    """
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if u.shape[1]:
        first_nz = (u != 0.0).argmax(axis=0)
        signs = np.sign(u[first_nz, np.arange(u.shape[1])])
        signs[signs == 0.0] = 1.0
        u = u * signs
        vt = vt * signs[:, None]
    return u, s, vt


def pseudo_inverse(a, rcond: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of ``a`` via SVD.

    Singular values ``sigma_j <= rcond * sigma_max`` are zeroed. ``rcond``
    defaults to :func:`default_rcond` of the input shape.
    """
    a = as_matrix(a, "A")
    rcond = _resolve_rcond(rcond, a.shape)
    u, s, vt = svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    inv = np.zeros_like(s)
    keep = s > rcond * s[0]
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def numerical_rank(a, rcond: float | None = None) -> int:
    """Number of singular values above ``rcond * sigma_max``."""
    a = as_matrix(a, "A")
    rcond = _resolve_rcond(rcond, a.shape)
    try:
        s = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rcond * s[0]))


def frob_rel_error(m, m_approx) -> float:
    """Relative Frobenius error ``||M - approx||_F / ||M||_F``."""
    m = as_matrix(m, "M")
    t = as_matrix(m_approx, "approx")
    if m.shape != t.shape:
        raise SpecError(f"shape mismatch: {m.shape} vs {t.shape}")
    denom = float(np.linalg.norm(m))
    if denom == 0.0:
        raise DegenerateError("reference matrix has zero Frobenius norm")
    return float(np.linalg.norm(m - t) / denom)


def cur_skeleton(m, row_ids, col_ids, rcond: float | None = None) -> np.ndarray:
    """Skeleton approximation of a fully known matrix from row/column subsets.

    Returns ``C @ pinv(M[rows, cols]) @ R`` with ``C = M[:, cols]`` and
    ``R = M[rows, :]``. Analysis-only: the online pipeline never materializes
    the full matrix this needs.
    """
    m = as_matrix(m, "M")
    rows = check_ids(row_ids, m.shape[0], "row_ids")
    cols = check_ids(col_ids, m.shape[1], "col_ids")
    c = m[:, cols]
    r = m[rows, :]
    joining = pseudo_inverse(m[np.ix_(rows, cols)], rcond)
    return c @ joining @ r


def optimal_joining_matrix(c, m, r, rcond: float | None = None) -> np.ndarray:
    """Least-squares joining matrix ``pinv(C) @ M @ pinv(R)``.

    Minimizes ``||M - C X R||_F`` over X, which stabilizes the square-anchor
    case, but needs every entry of ``M`` -- analysis-only, like
    :func:`cur_skeleton`.
    """
    c = as_matrix(c, "C")
    m = as_matrix(m, "M")
    r = as_matrix(r, "R")
    if c.shape[0] != m.shape[0] or r.shape[1] != m.shape[1]:
        raise SpecError(
            f"shape mismatch: C {c.shape} and R {r.shape} do not border M {m.shape}"
        )
    return pseudo_inverse(c, rcond) @ m @ pseudo_inverse(r, rcond)
