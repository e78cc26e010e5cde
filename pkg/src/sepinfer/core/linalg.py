"""Dense Gaussian elimination helpers used by the sufficiency oracle."""
from typing import List, Tuple

import numpy as np

from sepinfer.utils.config import Config


def row_echelon(matrix, tol: float = Config.PIVOT_TOL) -> Tuple[np.ndarray, List[int]]:
    """Reduced row echelon form by Gauss-Jordan elimination with partial pivoting.

    Args:
        matrix: 2-D array-like; it is copied, never modified.
        tol: Pivots with absolute value at or below ``tol`` count as zero.

    Returns:
        The reduced matrix and the list of pivot column indices. Rows past
        ``len(pivots)`` are zero within ``tol``.
    """
    reduced = np.array(matrix, dtype=np.float64, copy=True)
    if reduced.ndim != 2:
        raise ValueError("row_echelon expects a 2-D matrix")
    rows, cols = reduced.shape
    pivots: List[int] = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        best = r + int(np.argmax(np.abs(reduced[r:, c])))
        if abs(reduced[best, c]) <= tol:
            reduced[r:, c] = 0.0
            continue
        if best != r:
            reduced[[r, best]] = reduced[[best, r]]
        reduced[r] /= reduced[r, c]
        others = np.arange(rows) != r
        reduced[others] -= np.outer(reduced[others, c], reduced[r])
        reduced[others, c] = 0.0
        pivots.append(c)
        r += 1
    return reduced, pivots


def null_space(matrix, tol: float = Config.PIVOT_TOL) -> np.ndarray:
    """Basis of the right null space, one column per free variable."""
    reduced, pivots = row_echelon(matrix, tol)
    cols = reduced.shape[1]
    free = [c for c in range(cols) if c not in pivots]
    basis = np.zeros((cols, len(free)))
    for k, f in enumerate(free):
        basis[f, k] = 1.0
        for row, p in enumerate(pivots):
            basis[p, k] = -reduced[row, f]
    return basis


def annihilation_residual(operator, constraints, tol: float = Config.PIVOT_TOL) -> float:
    """Largest scaled value of ``operator @ v`` over the null-space basis of ``constraints``.

    Each basis vector is e_f minus the pivot combination read from the reduced
    form, so its residual is divided by the vector's l1 norm to make it
    comparable to the operator's own entries.
    """
    operator = np.asarray(operator, dtype=np.float64)
    basis = null_space(constraints, tol)
    if not basis.shape[1]:
        return 0.0
    residual = operator @ basis
    scale = np.abs(basis).sum(axis=0)
    return float(np.max(np.abs(residual) / scale))
