"""Positive solutions and the radial Riccati decomposition ``W + V + gamma^2 = div A + |A|^2``."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._jost import shoot_radial
from .eigen import interval_nodes, lowest_from_samples
from .potential import PotentialProfile, centrifugal_coefficient

BISECTION_STEPS = 60


class RiccatiError(ValueError):
    pass


def stage_values(q, a: float, h: float, m: int) -> np.ndarray:
    """``(Q(r_j), Q(r_j + h/2), Q(r_j + h))`` for the ``m`` steps from ``a``.

    For a profile, each step is evaluated on the piece containing its
    midpoint, so jumps sitting on nodes are resolved one-sidedly.
    """
    r0 = a + h * np.arange(m)
    rm, r1 = r0 + 0.5 * h, r0 + h
    if not isinstance(q, PotentialProfile):
        return np.stack([np.asarray(q(r), dtype=float) for r in (r0, rm, r1)], axis=1)
    out = np.zeros((m, 3))
    starts = np.array([p.interval[0] for p in q.pieces] + [float(q.support_end)])
    idx = np.searchsorted(starts, rm, side="right") - 1
    for k, p in enumerate(q.pieces):
        sel = idx == k
        if sel.any():
            for c, r in enumerate((r0, rm, r1)):
                out[sel, c] = p.evaluate(r[sel], 1)[:, 0, 0]
    return out


def _as_callable(q):
    if isinstance(q, PotentialProfile):
        return q.scalar
    return q


def dirichlet_bottom(q, interval: tuple, d: int = 3, step: float = 1e-3) -> float:
    """Bottom of ``-w'' + (Q + (d-1)(d-3)/(4 r^2)) w`` on ``interval`` (radial form of ``-Laplace + Q``)."""
    r, h = interval_nodes(interval[0], interval[1], step)
    c = float(centrifugal_coefficient(d))
    vals = np.asarray(_as_callable(q)(r), dtype=float) + c / r**2
    return lowest_from_samples(vals, h, vector=False)[0]


@dataclass(frozen=True)
class RiccatiDecomposition:
    interval: tuple
    gamma: float
    d: int
    r: np.ndarray
    positive_solution: np.ndarray
    A: np.ndarray
    target: np.ndarray  # W + V + gamma^2 at the nodes
    slope: float
    residual: float
    residual_profile: np.ndarray = field(repr=False, default=None)

    @property
    def h(self) -> float:
        return float(self.r[1] - self.r[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "u", "A", "residual"])
        res = self.residual_profile
        for i in range(self.r.size):
            w.writerow([f"{self.r[i]:.17g}", f"{self.positive_solution[i]:.17g}", f"{self.A[i]:.17g}",
                        "" if np.isnan(res[i]) else f"{res[i]:.17g}"])
        return buf.getvalue()


def _shoot(qst, a, h, gamma2, dm1, s):
    m = qst.shape[0]
    u = np.empty(m + 1)
    p = np.empty(m + 1)
    n = shoot_radial(a, h, qst, gamma2, dm1, float(s), u, p)
    return n, u, p


def positive_solution(q, interval: tuple, gamma: float, d: int = 3, step: float = 1e-3, check: bool = True):
    """Shoot ``u(a) = 1, u'(a) = s`` and bisect on ``s`` for a solution positive on ``[a, b]``.

    Returns ``(r, u, u', s, trials)``.  ``s = 0`` is used when admissible;
    otherwise ``s = s* + max(1, |s*|)`` with ``s*`` the bisected threshold.
    """
    a, b = float(interval[0]), float(interval[1])
    if not b > a > 0:
        raise RiccatiError(f"bad interval [{a}, {b}]")
    if gamma < 0:
        raise RiccatiError("gamma must be nonnegative")
    if check:
        bottom = dirichlet_bottom(q, (a, b), d, step)
        if bottom < -gamma * gamma:
            raise RiccatiError(
                f"precondition: bottom eigenvalue {bottom:.12g} on [{a:g}, {b:g}] is below -gamma^2 = {-gamma * gamma:.12g}"
            )
    m = int(round((b - a) / step))
    h = (b - a) / m
    qst = np.ascontiguousarray(stage_values(q, a, h, m))
    g2, dm1 = gamma * gamma, float(d - 1)
    trials = []

    def shot(s):
        n, u, p = _shoot(qst, a, h, g2, dm1, s)
        trials.append((float(s), n))
        return n, u, p

    n0, u, p = shot(0.0)
    if n0 == 0:
        s = 0.0
    else:
        hi = 1.0
        while shot(hi)[0] > 0:
            hi *= 2.0
            if hi > 1e12:
                raise RiccatiError("no positive solution found (shooting slope diverged)")
        lo = 0.0
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if shot(mid)[0] > 0:
                lo = mid
            else:
                hi = mid
        s = hi + max(1.0, abs(hi))
        n, u, p = shot(s)
        if n:
            raise RiccatiError("shooting failed to produce a positive solution")
    r = a + h * np.arange(m + 1)
    return r, u, p, s, trials


def _discontinuity_mask(q, r: np.ndarray, h: float) -> np.ndarray:
    """Nodes whose central stencil straddles a jump of ``Q``."""
    bad = np.zeros(r.size, bool)
    if isinstance(q, PotentialProfile):
        for x in q.discontinuities():
            bad |= np.abs(r - x) < 1.5 * h
    return bad


def decompose(q, interval: tuple, gamma: float, d: int = 3, step: float = 1e-3, check: bool = True) -> RiccatiDecomposition:
    """``A = u'/u`` on the nodes and the residual of ``A' + (d-1) A / r + A^2 = Q + gamma^2``.

    ``A'`` is the central difference, so the residual measures the grid
    error (second order); stencils across jumps of ``Q`` are skipped.
    """
    r, u, p, s, _ = positive_solution(q, interval, gamma, d, step, check)
    h = float(r[1] - r[0])
    A = p / u
    target = np.asarray(_as_callable(q)(r), dtype=float) + gamma * gamma
    res = np.full(r.size, np.nan)
    dA = (A[2:] - A[:-2]) / (2 * h)
    inner = dA + (d - 1) * A[1:-1] / r[1:-1] + A[1:-1] ** 2 - target[1:-1]
    res[1:-1] = inner
    res[_discontinuity_mask(q, r, h)] = np.nan
    finite = res[np.isfinite(res)]
    return RiccatiDecomposition(
        (float(interval[0]), float(interval[1])), float(gamma), d, r, u, A, target, float(s),
        float(np.max(np.abs(finite))) if finite.size else 0.0, res,
    )


def residual_ratio(q, interval: tuple, gamma: float, d: int = 3, step: float = 1e-3) -> dict:
    """Residual at ``h`` and ``h/2``; second order means a ratio near 4."""
    coarse = decompose(q, interval, gamma, d, step)
    fine = decompose(q, interval, gamma, d, step / 2, check=False)
    ratio = coarse.residual / fine.residual if fine.residual > 0 else math.inf
    return {"h": coarse.h, "residual_h": coarse.residual, "residual_h2": fine.residual, "ratio": ratio}


# --- weighted estimate -----------------------------------------------------------------


def trapezoid_theta(r: np.ndarray, a: float, a_in: float, b_in: float, b: float) -> np.ndarray:
    return np.interp(r, [a, a_in, b_in, b], [0.0, 1.0, 1.0, 0.0], left=0.0, right=0.0)


def centrifugal_weight(d: int) -> float:
    """Coefficient of ``|x|^{-2}`` on the right side: 6 for ``d <= 3``, ``3 (d-1)^2 / 2`` above."""
    return max(6.0, 1.5 * (d - 1) ** 2)


@dataclass(frozen=True)
class WeightedEstimateReport:
    lhs: float
    gamma_term: float
    potential_term: float
    edge_term: float
    inner: tuple
    outer: tuple
    direct_rhs: float = math.nan

    @property
    def rhs(self) -> float:
        return self.gamma_term + self.potential_term + self.edge_term

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_json(self) -> dict:
        return {
            "inner": list(self.inner),
            "outer": list(self.outer),
            "lhs": self.lhs,
            "rhs_terms": {"gamma_term": self.gamma_term, "potential_term": self.potential_term, "edge_term": self.edge_term},
            "rhs": self.rhs,
            "margin": self.margin,
            "direct_rhs": self.direct_rhs,
        }


def weighted_estimate(decomp: RiccatiDecomposition, inner: tuple, w=None, d: int | None = None) -> WeightedEstimateReport:
    """Both sides of the weighted ``|A|^2`` bound on the inner window (per unit solid angle).

    ``lhs = (1/2) int_inner A^2 dr``; right side ``67 gamma + int_a^b (W + 6 r^{-2}) dr
    + 6 (1/(a~ - a) + 1/(b - b~))``.  ``direct_rhs`` evaluates the unsimplified
    bound with the trapezoid cutoff.
    """
    d = decomp.d if d is None else d
    a, b = decomp.interval
    ai, bi = float(inner[0]), float(inner[1])
    if not a < ai < bi < b:
        raise RiccatiError(f"window ordering violated: need {a} < {ai} < {bi} < {b}")
    g = decomp.gamma
    if g > 0 and b - a > 67.0 / g * (1 + 1e-12):
        raise RiccatiError(f"interval width {b - a:g} exceeds 67/gamma = {67.0 / g:g}")
    r, A = decomp.r, decomp.A
    wv = np.zeros_like(r) if w is None else np.asarray(_as_callable(w)(r), dtype=float)
    sel = (r >= ai) & (r <= bi)
    lhs = 0.5 * float(integrate.trapezoid(A[sel] ** 2, r[sel]))
    # include partial cells at the window ends
    lhs += 0.5 * _edge_cells(r, A**2, ai, bi)
    kappa = centrifugal_weight(d)
    pot = float(integrate.trapezoid(wv + kappa / r**2, r))
    edge = 6.0 * (1.0 / (ai - a) + 1.0 / (b - bi))
    theta = trapezoid_theta(r, a, ai, bi, b)
    dtheta = np.gradient(theta, r)
    grad2 = (dtheta + theta * (1 - d) / (2 * r)) ** 2
    direct = float(integrate.trapezoid(g * g * theta**2 + wv * theta**2 + 3 * grad2, r))
    return WeightedEstimateReport(lhs, 67.0 * g, pot, edge, (ai, bi), (a, b), direct)


def _edge_cells(r, f, lo, hi) -> float:
    """Trapezoid pieces between ``lo``/``hi`` and the nearest interior nodes."""
    extra = 0.0
    i = np.searchsorted(r, lo)
    if 0 < i < r.size and r[i] > lo:
        fl = np.interp(lo, r, f)
        extra += 0.5 * (fl + f[i]) * (r[i] - lo)
    j = np.searchsorted(r, hi, side="right") - 1
    if 0 <= j < r.size - 1 and r[j] < hi:
        fh = np.interp(hi, r, f)
        extra += 0.5 * (fh + f[j]) * (hi - r[j])
    return extra


def cutoff_bound(decomp: RiccatiDecomposition, phi: np.ndarray, w=None) -> dict:
    """The unsimplified bound ``(1/2) int phi^2 A^2 <= gamma^2 int phi^2 + int W phi^2 + 3 int |phi'|^2``.

    ``phi`` holds node values of a radial test function vanishing at both ends;
    integrals are one-dimensional (the radial weight is absorbed into ``phi``).
    """
    r, A = decomp.r, decomp.A
    phi = np.asarray(phi, dtype=float)
    wv = np.zeros_like(r) if w is None else np.asarray(_as_callable(w)(r), dtype=float)
    dphi = np.gradient(phi, r)
    lhs = 0.5 * float(integrate.trapezoid(phi**2 * A**2, r))
    rhs = float(integrate.trapezoid(decomp.gamma**2 * phi**2 + wv * phi**2 + 3 * dphi**2, r))
    return {"lhs": lhs, "rhs": rhs, "margin": rhs - lhs}


# --- integration by parts identity ---------------------------------------------------------


def integration_by_parts_check(phi: np.ndarray, psi: np.ndarray, q: np.ndarray, lam: float, h: float) -> dict:
    """Both sides of ``int |(phi psi)'|^2 + Q (phi psi)^2 = int |phi'|^2 psi^2 + lam (phi psi)^2``.

    ``psi`` solves ``-psi'' + Q psi = lam psi`` on the nodes (with zero
    values at the two ends), ``phi`` is any bounded node function.  Forward
    differences on the cells; the two sides agree to ``O(h)``.
    """
    phi, psi, q = (np.asarray(x, dtype=float) for x in (phi, psi, q))
    prod = phi * psi
    lhs = float(np.sum(np.diff(prod) ** 2) / h + h * np.sum(q * prod**2))
    dphi = np.diff(phi) / h
    psi_mid2 = 0.5 * (psi[:-1] ** 2 + psi[1:] ** 2)
    rhs = float(h * np.sum(dphi**2 * psi_mid2) + lam * h * np.sum(prod**2))
    return {"lhs": lhs, "rhs": rhs, "difference": lhs - rhs}
