"""Dense small-matrix helpers: operator/exterior-power norms and sign-normalized QR.

Matrices are plain ``numpy.ndarray`` values of shape ``(d, d)`` with finite
entries.  All functions are pure and re-entrant; nothing here mutates its
inputs.  Factorizations are delegated to LAPACK through numpy, which is exact
enough for the d <= 16 matrices this package works with.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DegenerateFrameError

# Relative rank-deficiency tolerance: below it a frame counts as collapsed and
# spectrum estimators restart instead of returning +-inf.
RANK_TOL = 1e-12


def as_square(m) -> np.ndarray:
    """Validate and return ``m`` as a square float64 array with finite entries."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


class Svd(NamedTuple):
    """Singular value decomposition ``m = u @ diag(s) @ vt``, s non-increasing."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.u @ np.diag(self.s) @ self.vt


def svd_factors(m) -> Svd:
    a = as_square(m)
    u, s, vt = np.linalg.svd(a)
    return Svd(u, s, vt)


def singular_values(m) -> np.ndarray:
    """Singular values of a square matrix, sorted non-increasing."""
    return np.linalg.svd(as_square(m), compute_uv=False)


def operator_norm(m) -> float:
    """Euclidean operator norm sup |Mv|/|v|, i.e. the largest singular value."""
    return float(singular_values(m)[0])


def column_max_norm(m) -> float:
    """Max Euclidean column norm; equivalent to the operator norm within sqrt(d)."""
    a = as_square(m)
    return float(np.sqrt((a * a).sum(axis=0)).max())


def norm_equivalence_ratio(m) -> float:
    """Empirical ratio ||M|| / |M|_colmax, which lies in [1/sqrt(d), sqrt(d)]."""
    cm = column_max_norm(m)
    if cm == 0.0:
        return 1.0
    return operator_norm(m) / cm


def wedge_norm(m, l: int) -> float:
    """Norm of the l-th exterior power: the product of the l largest singular values.

    This is the maximal factor by which ``m`` expands l-dimensional volumes.
    """
    a = as_square(m)
    d = a.shape[0]
    if not 1 <= l <= d:
        raise ValueError(f"exterior power order l={l} out of range [1, {d}]")
    s = np.linalg.svd(a, compute_uv=False)
    return float(np.prod(s[:l]))


def qr_positive(m) -> tuple[np.ndarray, np.ndarray]:
    """QR factorization with strictly positive diagonal of R.

    Returns (Q, R) with Q orthogonal, R upper-triangular, diag(R) > 0 and
    Q @ R == m to working precision.  The sign convention makes log diag(R)
    a well-defined growth accumulator for spectrum estimation.

    Raises DegenerateFrameError when m is rank-deficient to relative
    tolerance RANK_TOL.
    """
    a = as_square(m)
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diagonal(r))
    if diag.min() <= RANK_TOL * diag.max():
        raise DegenerateFrameError(
            f"matrix is rank-deficient within tolerance {RANK_TOL:g}"
        )
    signs = np.where(np.diagonal(r) < 0.0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def qr_positive_stack(ms: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched qr_positive over a stack of matrices of shape (..., d, d).

    Returns (q, log_diag, degenerate) where log_diag[..., i] = ln R_ii and
    degenerate is a boolean mask of rank-deficient items (their q is reset to
    the identity and their log_diag to zero so callers can restart frames).
    """
    q, r = np.linalg.qr(ms)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    absdiag = np.abs(diag)
    degenerate = absdiag.min(axis=-1) <= RANK_TOL * absdiag.max(axis=-1)
    signs = np.where(diag < 0.0, -1.0, 1.0)
    q = q * signs[..., None, :]
    if np.any(degenerate):
        d = ms.shape[-1]
        q[degenerate] = np.eye(d)
        absdiag = absdiag.copy()
        absdiag[degenerate] = 1.0
    return q, np.log(absdiag), degenerate
