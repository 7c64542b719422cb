"""Pure-numpy masked Gauss-Jordan elimination.

Reference implementation of the restricted inverse kernel. Also the path
taken whenever the compiled extension is missing or a zero pivot requires
the permutation fix-up (which needs a matching solver).
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import EliminationError


def _trailing_fix(A, B, k):
    """Row-permute A[k:] (and B[k:]) so every trailing diagonal entry is nonzero.

    The permutation is picked by max-weight matching on |A[k:, k:]|. Rows
    matched into each other along a cycle of an invertible masked matrix
    necessarily share the same allowed support, so the row moves can never
    place a value on a forbidden position.
    """
    sub = np.abs(A[k:, k:])
    cost = np.where(sub > 0.0, -sub, np.inf)
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError as exc:
        raise EliminationError(
            f"singular at stage {k}: trailing block has no nonzero transversal"
        ) from exc
    order = np.empty(A.shape[0] - k, dtype=np.intp)
    order[cols] = rows  # new trailing row j holds old trailing row order[j]
    A[k:] = A[k:][order]
    B[k:] = B[k:][order]


def gj_inverse_masked(C, pivot_tol):
    """Invert C by row operations that never write outside its allowed pattern.

    C must be exactly zero on forbidden positions (callers project first);
    every elimination step then preserves those zeros exactly, so the result
    carries the same sparsity guarantee by construction.
    """
    A = np.array(C, dtype=np.float64, copy=True)
    m = A.shape[0]
    B = np.eye(m)
    for k in range(m):
        if abs(A[k, k]) <= pivot_tol:
            _trailing_fix(A, B, k)
            if abs(A[k, k]) <= pivot_tol:
                raise EliminationError(
                    f"pivot below tolerance at stage {k} after permutation fix"
                )
        p = A[k, k]
        A[k] /= p
        B[k] /= p
        col = A[:, k].copy()
        col[k] = 0.0
        nz = np.flatnonzero(col)
        if nz.size:
            A[nz] -= col[nz, None] * A[k]
            B[nz] -= col[nz, None] * B[k]
    return B
