"""Small numerical helpers shared by the quantization modules."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, svds


def spectral_norm(M, dense_limit: int = 600) -> float:
    """Largest singular value of a dense or sparse matrix.

    Small matrices use a dense SVD; large ones use ARPACK on the sparse
    representation, which converges to machine precision for our banded
    residuals.
    """
    if sp.issparse(M):
        M = M.tocsr()
        if M.nnz == 0:
            return 0.0
        amax = np.abs(M.data).max()
        if amax == 0.0:
            return 0.0
        if min(M.shape) <= dense_limit:
            return float(np.linalg.norm(M.toarray(), 2))
        return float(_arpack_norm(M / amax) * amax)
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    amax = np.abs(M).max()
    if amax == 0.0:
        return 0.0
    if min(M.shape) <= 2 * dense_limit:
        return float(np.linalg.norm(M, 2))
    return float(_arpack_norm(M / amax) * amax)


def _arpack_norm(M) -> float:
    v0 = np.ones(min(M.shape)) / np.sqrt(min(M.shape))
    try:
        s = svds(M, k=1, which="LM", return_singular_vectors=False, tol=1e-10, v0=v0,
                 maxiter=2000)
    except ArpackNoConvergence:
        # only happens for residuals at rounding level; the Schur bound is tight enough there
        if sp.issparse(M):
            n1, ninf = abs(M).sum(axis=0).max(), abs(M).sum(axis=1).max()
        else:
            n1, ninf = np.abs(M).sum(axis=0).max(), np.abs(M).sum(axis=1).max()
        return float(np.sqrt(n1 * ninf))
    return float(s[0])


def loglog_slope(xs, ys) -> tuple:
    """Least-squares slope of log(ys) against log(xs) and its standard error."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    if dof > 0:
        resid = y - A @ coef
        s2 = resid @ resid / dof
        cov = s2 * np.linalg.inv(A.T @ A)
        se = float(np.sqrt(cov[0, 0]))
    else:
        se = float("nan")
    return float(coef[0]), se
