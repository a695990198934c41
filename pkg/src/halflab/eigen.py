"""Negative spectrum, eigenvalue sums and ground states of discretized operators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._sturm import count_below, eigenvalues_below
from .operator import DiscreteOperator, Grid, GridError, assemble_operator, block_banded
from .potential import PotentialProfile

ZERO_CUT = 1e-10
DENSE_LIMIT = 6000


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenReport:
    """Sorted negative eigenvalues with ``sum_j sqrt|lambda_j|``."""

    eigenvalues: tuple
    method: str
    grid: dict = field(default_factory=dict)
    sum_sqrt: float = math.nan

    def __post_init__(self):
        ev = tuple(float(x) for x in self.eigenvalues)
        object.__setattr__(self, "eigenvalues", ev)
        if any(x >= 0 for x in ev):
            raise EigenError("eigen report holds a nonnegative value")
        if any(b <= a for a, b in zip(ev, ev[1:])):
            raise EigenError("eigenvalues are not strictly increasing")
        s = math.fsum(math.sqrt(-x) for x in ev)
        if math.isnan(self.sum_sqrt):
            object.__setattr__(self, "sum_sqrt", s)
        elif abs(self.sum_sqrt - s) > 1e-14 * max(s, 1.0):
            raise EigenError("sum_sqrt does not match the eigenvalues")

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def lowest(self) -> float:
        return self.eigenvalues[0] if self.eigenvalues else 0.0

    def to_json(self) -> dict:
        return {
            "eigenvalues": list(self.eigenvalues),
            "sum_sqrt": self.sum_sqrt,
            "count": self.count,
            "method": self.method,
            "grid": dict(self.grid),
        }


def combined_sum(plus: EigenReport, minus: EigenReport) -> float:
    """``sum sqrt|lambda^+| + sum sqrt|lambda^-|`` for the pair ``H_+``, ``H_-``."""
    return plus.sum_sqrt + minus.sum_sqrt


@dataclass(frozen=True)
class GroundState:
    eigenvalue: float
    r: np.ndarray
    values: np.ndarray  # (M, n), normalized so that h * sum |u|^2 = 1
    h: float

    @property
    def norm(self) -> float:
        return float(math.sqrt(self.h * np.sum(self.values**2)))

    def sign_changes(self, tol: float = 0.0) -> int:
        u = self.values[:, 0]
        s = np.sign(u[np.abs(u) > tol])
        return int(np.count_nonzero(s[1:] != s[:-1]))


def _lower_bound(q: np.ndarray) -> float:
    """Gershgorin-type bracket: the kinetic part is nonnegative, so the bottom is >= min eig Q."""
    if q.shape[1] == 1:
        low = float(np.min(q[:, 0, 0], initial=0.0))
    else:
        low = float(np.min(np.linalg.eigvalsh(q)[:, 0], initial=0.0))
    return min(low, 0.0) - 1.0


def _dedupe(vals: np.ndarray) -> np.ndarray:
    vals = np.sort(vals)
    if vals.size < 2:
        return vals
    keep = np.concatenate([[True], np.diff(vals) > 0])
    return vals[keep]


def negative_spectrum(op: DiscreteOperator, tol: float = 1e-13, zero_cut: float = ZERO_CUT) -> EigenReport:
    """All eigenvalues below ``-zero_cut``.

    Scalar operators use Sturm-sequence bisection (each eigenvalue to ``tol``
    absolute or machine precision relative); matrix channels use the banded
    symmetric LAPACK driver restricted to ``[lower bound, -zero_cut)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lo = _lower_bound(op.potential)
    if op.n == 1:
        vals = eigenvalues_below(op.scalar_diagonal(), op.off, lo, -zero_cut, tol)
        method = "bisection-sturm"
    else:
        try:
            vals = linalg.eig_banded(op.banded(), eigvals_only=True, select="v", select_range=(lo, -zero_cut))
        except linalg.LinAlgError as exc:
            raise EigenError(f"banded eigensolve failed: {exc}") from exc
        method = "banded-symmetric"
    return EigenReport(tuple(_dedupe(vals)), method, op.fingerprint())


def dense_oracle(op: DiscreteOperator, zero_cut: float = ZERO_CUT) -> EigenReport:
    """Independent reference: full symmetric eigensolve (dense when small)."""
    lo = _lower_bound(op.potential)
    if op.size <= DENSE_LIMIT:
        a = op.dense()
        try:
            vals = linalg.eigh(a, eigvals_only=True, subset_by_value=(lo, -zero_cut))
        except linalg.LinAlgError as exc:
            cond = np.linalg.cond(a)
            raise EigenError(f"dense eigensolve failed (condition estimate {cond:.3g}): {exc}") from exc
    elif op.n == 1:
        d = op.scalar_diagonal()
        e = np.full(d.size - 1, op.off)
        vals = linalg.eigh_tridiagonal(d, e, eigvals_only=True, select="v", select_range=(lo, -zero_cut))
    else:
        vals = linalg.eig_banded(op.banded(), eigvals_only=True, select="v", select_range=(lo, -zero_cut))
    return EigenReport(tuple(_dedupe(vals)), "dense-oracle", op.fingerprint())


# --- subinterval problems ---------------------------------------------------------


def interval_nodes(a: float, b: float, step: float) -> tuple[np.ndarray, float]:
    """Interior nodes of a uniform grid on ``[a, b]`` with spacing close to ``step``."""
    if not b > a:
        raise GridError(f"empty interval [{a}, {b}]")
    if b - a < 4 * step:
        raise GridError(f"grid too coarse: interval [{a:g}, {b:g}] is shorter than 4 steps of {step:g}")
    m = int(round((b - a) / step))
    h = (b - a) / m
    return a + h * np.arange(1, m), h


def lowest_from_samples(q: np.ndarray, h: float, kinetic: float = 1.0, vector: bool = True):
    """Bottom eigenvalue (and eigenvector) of the Dirichlet problem with node samples ``q``.

    ``q`` has shape ``(M,)`` or ``(M, n, n)`` on the interior nodes.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[:, None, None]
    m, n = q.shape[:2]
    off = -kinetic / h**2
    if n == 1:
        d = 2.0 * kinetic / h**2 + q[:, 0, 0]
        if m == 1:
            return float(d[0]), (np.ones((1, 1)) if vector else None)
        e = np.full(m - 1, off)
        if not vector:
            lo = float(np.min(d)) - 2 * abs(off) - 1.0
            hi = float(np.max(d)) + 2 * abs(off) + 1.0
            from ._sturm import bisect_range

            val = bisect_range(np.ascontiguousarray(d), off * off, lo, hi, 0, 1, 0.0)[0]
            return float(val), None
        w, v = linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
        return float(w[0]), v[:, 0].reshape(m, 1)
    blocks = 2.0 * kinetic / h**2 * np.eye(n) + q
    ab = block_banded(blocks, off)
    if not vector:
        w = linalg.eig_banded(ab, eigvals_only=True, select="i", select_range=(0, 0))
        return float(w[0]), None
    w, v = linalg.eig_banded(ab, select="i", select_range=(0, 0))
    return float(w[0]), v[:, 0].reshape(m, n)


def _normalize(vec: np.ndarray, h: float) -> np.ndarray:
    vec = vec / math.sqrt(h * float(np.sum(vec**2)))
    flat = vec.reshape(-1)
    nz = np.flatnonzero(np.abs(flat) > 0)
    if nz.size and flat[nz[0]] < 0:
        vec = -vec
    return vec


def lowest_eigenvalue_on(profile: PotentialProfile, interval: tuple, step: float = 1e-3, sign: float = 1.0):
    """Bottom of ``-d^2/dr^2 + sign * Q`` on ``[a, b]`` with Dirichlet ends, and its ground state."""
    a, b = float(interval[0]), float(interval[1])
    if a < 1:
        raise GridError(f"interval starts at {a} < 1")
    r, h = interval_nodes(a, b, step)
    q = sign * profile.evaluate(r)
    val, vec = lowest_from_samples(q, h)
    return val, GroundState(val, r, _normalize(vec, h), h)


def eigenvalue_monotonicity_check(
    v: PotentialProfile, w_tilde: PotentialProfile, r1: float, r2: float, grid: Grid
) -> dict:
    """Compare eigenvalues of ``(1 - chi_R) W_- + V`` at two cutoff radii ``R1 < R2``.

    ``W_- = max(-W, 0)`` is the negative part of ``w_tilde``.  Missing
    eigenvalues count as 0 (the threshold), which is what min-max compares.
    """
    if not r1 < r2:
        raise ValueError("need R1 < R2")
    r = grid.interior
    wm = np.maximum(-w_tilde.scalar(r), 0.0)
    base = v.scalar(r)
    reports = []
    for cut in (r1, r2):
        q = base + np.where(r >= cut, wm, 0.0)
        reports.append(negative_spectrum(DiscreteOperator.from_samples(grid, q)))
    e1, e2 = reports
    m = max(e1.count, e2.count)
    pad = lambda ev: list(ev) + [0.0] * (m - len(ev))
    l1, l2 = pad(e1.eigenvalues), pad(e2.eigenvalues)
    ok = [a >= b - 1e-12 * max(1.0, abs(b)) for a, b in zip(l1, l2)]
    return {"R1": r1, "R2": r2, "lambda_R1": l1, "lambda_R2": l2, "monotone": ok, "passed": all(ok)}


def boundedness_check(
    v_samples: np.ndarray, w_minus: np.ndarray, a_field: np.ndarray, grid: Grid, radii=(2, 4, 8, 16)
) -> dict:
    """Uniform bounds on the negative spectra of ``(1 - chi_R) W_- + V`` over ``R``.

    The reference operator is ``-(1/2) d^2/dr^2 - A^2 - W_-`` on the same grid;
    its eigenvalue count and bottom bound those of every member of the family.
    All arrays are node samples on ``grid.nodes``.
    """
    r = grid.nodes
    ref = DiscreteOperator.from_samples(grid, -a_field**2 - w_minus, kinetic=0.5)
    ref_rep = negative_spectrum(ref)
    rows = []
    for R in radii:
        q = v_samples + np.where(r >= R, w_minus, 0.0)
        rep = negative_spectrum(DiscreteOperator.from_samples(grid, q))
        rows.append({"R": R, "count": rep.count, "lowest": rep.lowest})
    passed = all(row["count"] <= ref_rep.count and row["lowest"] >= ref_rep.lowest for row in rows)
    return {"reference_count": ref_rep.count, "reference_lowest": ref_rep.lowest, "family": rows, "passed": passed}


def square_well_oracle(depth: float = 4.0, width: float = 1.0) -> float:
    """Lowest eigenvalue of a Dirichlet half-line well ``-depth`` on ``[1, 1 + width]``.

    Matching ``sin(kappa x)`` to ``exp(-mu x)`` gives ``kappa cot(kappa w) = -mu``
    with ``kappa^2 + mu^2 = depth``.
    """
    from scipy.optimize import brentq

    v = math.sqrt(depth)

    def g(kappa):
        return kappa * math.cos(kappa * width) + math.sqrt(max(depth - kappa**2, 0.0)) * math.sin(kappa * width)

    lo = math.pi / (2 * width)
    if lo >= v:
        raise ValueError("well too shallow for a bound state")
    hi = min(v, math.pi / width) * (1 - 1e-15)
    kappa = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return kappa**2 - depth


__all__ = [
    "EigenReport",
    "GroundState",
    "EigenError",
    "negative_spectrum",
    "dense_oracle",
    "combined_sum",
    "lowest_eigenvalue_on",
    "lowest_from_samples",
    "interval_nodes",
    "eigenvalue_monotonicity_check",
    "boundedness_check",
    "square_well_oracle",
    "count_below",
    "assemble_operator",
]
