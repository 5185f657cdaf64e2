"""Dense real linear algebra kernels used by the field constructions.

Everything here operates on plain float64 numpy arrays and is pure, so the
functions are safe to call concurrently.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd

import numpy as np

from .errors import ContractError, DimensionError

SVD_CUTOFF = 1e-10  # relative singular-value cutoff for rank decisions


def _as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={m.ndim}")
    return m


def skew_part(f) -> np.ndarray:
    """Skew-symmetric part (F - F^T)/2 of a square matrix.

    Each off-diagonal pair is computed once and negated and the diagonal is
    set to zero, so the result satisfies A^T = -A entrywise exactly.
    """
    f = _as_matrix(f)
    n, m = f.shape
    if n != m:
        raise DimensionError(f"skew_part needs a square matrix, got {n}x{m}")
    upper = np.triu((f - f.T) * 0.5, k=1)
    return upper - upper.T


def _is_integer_matrix(m: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(m)) and np.all(m == np.round(m)) and np.all(np.abs(m) < 2**52))


def _rational_nullspace(m: np.ndarray) -> np.ndarray:
    """Exact null-space basis of an integer matrix via Gauss-Jordan over Q.

    Columns are scaled to the smallest integer form (free variable = 1, then
    denominators cleared and the gcd divided out).
    """
    rows, cols = m.shape
    a = [[Fraction(int(round(v))) for v in row] for row in m]
    pivot_cols: list[int] = []
    r = 0
    for c in range(cols):
        pivot = next((i for i in range(r, rows) if a[i][c] != 0), None)
        if pivot is None:
            continue
        a[r], a[pivot] = a[pivot], a[r]
        inv = a[r][c]
        a[r] = [v / inv for v in a[r]]
        for i in range(rows):
            if i != r and a[i][c] != 0:
                factor = a[i][c]
                a[i] = [vi - factor * vr for vi, vr in zip(a[i], a[r])]
        pivot_cols.append(c)
        r += 1
        if r == rows:
            break
    free_cols = [c for c in range(cols) if c not in pivot_cols]
    basis = np.zeros((cols, len(free_cols)))
    for j, fc in enumerate(free_cols):
        col = [Fraction(0)] * cols
        col[fc] = Fraction(1)
        for i, pc in enumerate(pivot_cols):
            col[pc] = -a[i][fc]
        denom_lcm = 1
        for v in col:
            denom_lcm = denom_lcm * v.denominator // gcd(denom_lcm, v.denominator)
        ints = [int(v * denom_lcm) for v in col]
        g = 0
        for v in ints:
            g = gcd(g, abs(v))
        if g > 1:
            ints = [v // g for v in ints]
        basis[:, j] = ints
    return basis


def nullspace_basis(m) -> np.ndarray:
    """Basis B (columns) of Null(M), with M @ B = 0 and rank(B) = cols - rank(M).

    Integer matrices are eliminated exactly over the rationals and the basis
    columns come out in smallest-integer form; anything else falls back to
    SVD thresholding.
    """
    m = _as_matrix(m)
    if _is_integer_matrix(m):
        return _rational_nullspace(m)
    _, s, vt = np.linalg.svd(m)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > SVD_CUTOFF * smax)) if smax > 0 else 0
    return vt[rank:].T.copy()


def pinv_gram(g, tol: float = SVD_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a small symmetric PSD Gram matrix.

    Uses a symmetric eigendecomposition; eigenvalues below tol * lambda_max
    are treated as exact zeros.
    """
    g = _as_matrix(g)
    n, m = g.shape
    if n != m:
        raise DimensionError(f"pinv_gram needs a square matrix, got {n}x{m}")
    asym = np.max(np.abs(g - g.T))
    scale = max(np.max(np.abs(g)), 1.0)
    if asym > 1e-10 * scale:
        raise ContractError(f"pinv_gram input asymmetric beyond tolerance ({asym:.3e})")
    g = (g + g.T) * 0.5
    w, v = np.linalg.eigh(g)
    wmax = max(w.max(), 0.0) if w.size else 0.0
    inv_w = np.where(w > tol * wmax, 1.0 / np.where(w > tol * wmax, w, 1.0), 0.0) if wmax > 0 else np.zeros_like(w)
    return (v * inv_w) @ v.T


def matmul(a, b) -> np.ndarray:
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def matvec(a, x) -> np.ndarray:
    a = _as_matrix(a)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: {a.shape} @ {x.shape}")
    return a @ x


def transpose(a) -> np.ndarray:
    return _as_matrix(a).T.copy()


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))
