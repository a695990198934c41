"""Numba kernels for Sturm-sequence bisection on symmetric tridiagonal matrices
with constant off-diagonal."""
from __future__ import annotations

import numpy as np
from numba import njit

_EPS = np.finfo(np.float64).eps


@njit(cache=True)
def sturm_count(diag, off2, x, pivmin):
    """Number of eigenvalues strictly below ``x``."""
    count = 0
    q = diag[0] - x
    if abs(q) < pivmin:
        q = -pivmin
    if q < 0.0:
        count += 1
    for i in range(1, diag.shape[0]):
        q = diag[i] - x - off2 / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0.0:
            count += 1
    return count


@njit(cache=True)
def bisect_range(diag, off2, lo, hi, k0, k1, atol):
    """Eigenvalues with indices ``k0 <= k < k1`` inside ``[lo, hi]`` by bisection."""
    pivmin = max(1e-300, 1e-300 * off2)
    out = np.empty(k1 - k0)
    for k in range(k0, k1):
        a = lo
        b = hi
        for _ in range(200):
            if b - a <= max(atol, 4.0 * _EPS * max(abs(a), abs(b))):
                break
            mid = 0.5 * (a + b)
            if sturm_count(diag, off2, mid, pivmin) > k:
                b = mid
            else:
                a = mid
        out[k - k0] = 0.5 * (a + b)
    return out


def count_below(diag: np.ndarray, off: float, x: float) -> int:
    off2 = float(off) ** 2
    return int(sturm_count(np.ascontiguousarray(diag, dtype=np.float64), off2, float(x), max(1e-300, 1e-300 * off2)))


def eigenvalues_below(diag: np.ndarray, off: float, lo: float, cut: float, atol: float) -> np.ndarray:
    """All eigenvalues in ``[lo, cut)`` of the tridiagonal matrix ``(diag, off)``."""
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    off2 = float(off) ** 2
    m = count_below(diag, off, cut)
    if m == 0:
        return np.empty(0)
    return bisect_range(diag, off2, float(lo), float(cut), 0, m, float(atol))
