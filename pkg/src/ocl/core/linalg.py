"""
Dense small-matrix kernels used by the curvature code.

All matrices are float64 numpy arrays. Nothing here regularizes silently:
damping policy lives in `ocl.core.kfac`.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from ocl.core.errors import NoConvergence, NotPositiveDefinite, ShapeMismatch


def _as_square(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"[linalg] {name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite(f"[linalg] {name} has non-finite entries")
    return m


def spd_inverse(m: np.ndarray) -> np.ndarray:
    """Invert a symmetric positive-definite matrix through its Cholesky factor."""
    m = _as_square(m, "m")
    try:
        factor = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"[linalg] Cholesky failed on {m.shape[0]}x{m.shape[0]} matrix ({exc})"
        ) from exc
    inv = scipy.linalg.cho_solve(factor, np.eye(m.shape[0]), check_finite=False)
    # cho_solve leaves rounding asymmetry of order eps
    return 0.5 * (inv + inv.T)


def sym_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns, so that ``Q @ diag(s) @ Q.T`` reconstructs `m`.
    """
    m = _as_square(m, "m")
    try:
        vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"[linalg] eigh did not converge ({exc})") from exc
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def kron_precondition(
    a_inv: np.ndarray, g_inv: np.ndarray, grad: np.ndarray
) -> np.ndarray:
    """
    Apply ``(A kron G)^-1`` to a layer gradient without forming the product.

    `grad` is the (out_dim x in_dim+1) matrix [dW | db]. With column-major
    vectorisation, ``(A kron G)^-1 vec(V) = vec(G^-1 V A^-1)`` for symmetric A.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim != 2:
        raise ShapeMismatch(f"[linalg] grad must be 2-D, got shape {grad.shape}")
    out_dim, in_dim = grad.shape
    if a_inv.shape != (in_dim, in_dim):
        raise ShapeMismatch(
            f"[linalg] a_inv shape {a_inv.shape} does not match grad cols {in_dim}"
        )
    if g_inv.shape != (out_dim, out_dim):
        raise ShapeMismatch(
            f"[linalg] g_inv shape {g_inv.shape} does not match grad rows {out_dim}"
        )
    return g_inv @ grad @ a_inv


def kron_dense(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Dense ``A kron G`` in the ordering used by `kron_precondition`."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(g, dtype=np.float64))
