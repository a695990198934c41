"""Entropy integrals, the trace-type sum rule and entropy semicontinuity checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from .eigen import EigenReport, negative_spectrum
from .operator import Grid, assemble_operator
from .potential import PotentialProfile, ProfileError, centrifugal_coefficient
from .spectral import DENSITY_FLOOR, SpectralDensity, density_ratio, free_density

NEG_INF = float("-inf")
GL_ORDER = 12


class CoverageError(ValueError):
    pass


def sphere_area(d: int) -> float:
    """``|S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)``."""
    return 2.0 * math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d))


# --- quadrature in k = sqrt(lambda) ------------------------------------------------


def _free_zeros_k(k0: float, k1: float) -> list[float]:
    m0 = max(1, int(math.ceil(k0 / (2 * math.pi))))
    out = []
    m = m0
    while 2 * math.pi * m < k1:
        if 2 * math.pi * m > k0:
            out.append(2 * math.pi * m)
        m += 1
    return out


def _panels(k0: float, k1: float, singular: Sequence[float], per_unit: int, grading: int) -> list[tuple[float, float]]:
    """Panels on ``[k0, k1]``: uniform away from ``singular`` points, geometric toward them."""
    cuts = [k0] + [s for s in singular if k0 < s < k1] + [k1]
    sing = set(singular)
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        left, right = a in sing, b in sing
        core_a, core_b = a, b
        width = b - a
        if left:
            core_a = a + width * 0.25
            edges = [a + (core_a - a) * 0.5**j for j in range(grading, -1, -1)]
            out += [(a, edges[0])] + list(zip(edges[:-1], edges[1:]))
        if right:
            core_b = b - width * 0.25
        m = max(1, int(math.ceil((core_b - core_a) * per_unit)))
        e = np.linspace(core_a, core_b, m + 1)
        out += list(zip(e[:-1], e[1:]))
        if right:
            edges = [b - (b - core_b) * 0.5**j for j in range(0, grading + 1)]
            out += list(zip(edges[:-1], edges[1:])) + [(edges[-1], b)]
    return out


def _gl(fn, panels) -> float:
    x, w = np.polynomial.legendre.leggauss(GL_ORDER)
    a = np.array([p[0] for p in panels])
    b = np.array([p[1] for p in panels])
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).reshape(-1)
    vals = np.asarray(fn(nodes), dtype=float).reshape(len(panels), GL_ORDER)
    return float(np.sum(half * (vals @ w)))


def integrate_k(fn: Callable, a: float, b: float, singular=(), tol: float = 1e-11, max_rounds: int = 8):
    """``int_a^b g(lambda) lambda^{-1/2} d lambda = 2 int_{sqrt a}^{sqrt b} g(k^2) dk``.

    ``fn`` maps k-values to ``g(k^2)``.  Composite Gauss-Legendre with panels
    graded geometrically toward ``singular`` k-points; panel count doubles
    until two successive values agree to ``tol``.  Returns ``(value, error)``.
    """
    k0, k1 = math.sqrt(a), math.sqrt(b)
    per_unit, grading = 2, 20
    prev = None
    for _ in range(max_rounds):
        val = 2.0 * _gl(fn, _panels(k0, k1, singular, per_unit, grading))
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val, abs(val - prev)
        prev = val
        per_unit *= 2
        grading += 8
    return val, abs(val - prev)


def free_log_integral(a: float, b: float) -> tuple[float, float]:
    """``int_a^b log(mu'_free) lambda^{-1/2} d lambda`` with the log zeros handled by quadrature."""

    def g(k):
        return 2.0 * np.log(2.0 * np.sin(0.5 * k) ** 2) - math.log(math.pi) - 3.0 * np.log(k)

    return integrate_k(g, a, b, _free_zeros_k(math.sqrt(a), math.sqrt(b)))


def correction_integral(a: float, b: float) -> tuple[float, float]:
    """``int_a^b log((1 - cos sqrt l)^2 / (4 pi l^{3/2})) l^{-1/2} d l``."""
    val, err = free_log_integral(a, b)
    return val - 2.0 * math.log(4.0) * (math.sqrt(b) - math.sqrt(a)), err


def entropy_integral(density, a: float, b: float, tol: float = 1e-11, max_gap: float = 0.1) -> float:
    """``int_a^b log(mu') lambda^{-1/2} d lambda``.

    ``density`` is either a callable ``mu'(lambda)`` or a sampled
    :class:`SpectralDensity`.  Samples are split as ``mu' = mu'_free * ratio``;
    the free part is integrated exactly and ``log ratio`` by a cubic spline in
    ``k``, with ratio values inside 1e-4 windows around ``(2 pi m)^2``
    replaced by interpolation.  Returns ``-inf`` when ``mu'`` vanishes on a
    set of positive measure.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    if callable(density) and not isinstance(density, SpectralDensity):
        k0, k1 = math.sqrt(a), math.sqrt(b)
        probe = np.asarray(density(np.linspace(a, b, 4001)), dtype=float)
        if _vanishes_on_interval(probe):
            return NEG_INF

        def g(k):
            return np.log(np.maximum(np.asarray(density(k * k), dtype=float), DENSITY_FLOOR))

        return integrate_k(g, a, b, _free_zeros_k(k0, k1), tol)[0]
    lam, dens = density.lambda_grid, density.density
    if lam[0] > a * (1 + 1e-12) or lam[-1] < b * (1 - 1e-12):
        raise CoverageError(f"density grid [{lam[0]:g}, {lam[-1]:g}] does not cover [{a:g}, {b:g}]")
    inside = (lam >= a * (1 - 1e-12)) & (lam <= b * (1 + 1e-12))
    k = np.sqrt(lam)
    sel = np.flatnonzero(inside)
    lo, hi = max(sel[0] - 1, 0), min(sel[-1] + 2, lam.size)
    k_use, d_use = k[lo:hi], dens[lo:hi]
    gaps = np.diff(k_use)
    if gaps.size and gaps.max() > max_gap:
        i = int(np.argmax(gaps))
        raise CoverageError(f"grid gap ({lam[lo + i]:g}, {lam[lo + i + 1]:g}) inside [{a:g}, {b:g}]")
    if _vanishes_on_interval(d_use):
        return NEG_INF
    lam_use = k_use**2
    zeros = np.array(_free_zeros_k(float(k_use[0]), float(k_use[-1]))) ** 2
    keep = np.ones(lam_use.size, bool)
    for z0 in zeros:
        keep &= np.abs(lam_use - z0) > 0.5e-4
    ratio = d_use[keep] / free_density(lam_use[keep])
    spline = CubicSpline(k_use[keep], np.log(np.maximum(ratio, DENSITY_FLOOR)))
    rel = 2.0 * float(spline.integrate(math.sqrt(a), math.sqrt(b)))
    return free_log_integral(a, b)[0] + rel


def _vanishes_on_interval(values: np.ndarray, run: int = 8) -> bool:
    """True if at least ``run`` consecutive samples sit at the density floor."""
    small = np.asarray(values) <= 10 * DENSITY_FLOOR
    if not small.any():
        return False
    count = 0
    for s in small:
        count = count + 1 if s else 0
        if count >= run:
            return True
    return False


# --- sum rule -------------------------------------------------------------------------


@dataclass(frozen=True)
class SumRuleReport:
    interval: tuple
    lhs_entropy: float
    lhs_correction: float
    potential_term: float
    eigen_term: float
    depth_term: float
    relative_entropy_variant: float
    quadrature_error: float
    eigenvalues: tuple = ()
    extra_term: float = 0.0
    constants: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def lhs_total(self) -> float:
        return self.lhs_entropy + self.lhs_correction

    @property
    def rhs_total(self) -> float:
        return self.potential_term + self.eigen_term + self.depth_term + self.extra_term

    @property
    def margin(self) -> float:
        """Literal form: ``lhs_entropy + lhs_correction - rhs``."""
        return self.lhs_total - self.rhs_total

    @property
    def relative_margin(self) -> float:
        """Relative-entropy form: ``int log(mu'/mu'_free) l^{-1/2} - rhs``."""
        return self.relative_entropy_variant - self.rhs_total

    def to_json(self) -> dict:
        return {
            "interval": list(self.interval),
            "lhs_entropy": self.lhs_entropy,
            "lhs_correction": self.lhs_correction,
            "lhs_total": self.lhs_total,
            "rhs_terms": {
                "potential_term": self.potential_term,
                "eigen_term": self.eigen_term,
                "depth_term": self.depth_term,
                "centrifugal_term": self.extra_term,
            },
            "rhs_total": self.rhs_total,
            "margin": self.margin,
            "relative_entropy_variant": self.relative_entropy_variant,
            "relative_margin": self.relative_margin,
            "quadrature_error": self.quadrature_error,
            "eigenvalues": list(self.eigenvalues),
            "constants": dict(self.constants),
            **({"meta": dict(self.meta)} if self.meta else {}),
        }


def dimension_constants(d: int, a: float, b: float, v_minus: float) -> dict:
    """``C_d = pi/(2|S|) + 2 pi`` and ``alpha_d(a, b; ||V_-||)``."""
    area = sphere_area(d)
    corr = correction_integral(a, b)[0]
    alpha = 2 * math.pi * math.sqrt(v_minus + 0.25) + (d - 1) * (d - 3) / 8.0 + corr
    return {"d": d, "sphere_area": area, "C_d": math.pi / (2 * area) + 2 * math.pi, "alpha_d": alpha}


def default_eigen_grid(profile: PotentialProfile, step: float = 1e-3, length: float = 50.0) -> Grid:
    end = float(profile.support_end)
    return Grid(max(length, end + 40.0), step)


def sum_rule_check(
    profile: PotentialProfile,
    a: float = 0.5,
    b: float = 20.0,
    eigen: EigenReport | None = None,
    grid: Grid | None = None,
    d: int = 3,
    tol: float = 1e-11,
) -> SumRuleReport:
    """All terms of the trace-type inequality for ``-u'' + Q u`` on ``[1, inf)``.

    Raises :class:`HypothesisViolation` when ``Q e0 != 0`` on ``r <= 2``.
    """
    profile.check_e0_hypothesis(2.0)
    if not profile.is_compact:
        raise ProfileError("sum rule check needs a compactly supported potential")
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    if eigen is None:
        grid = grid or default_eigen_grid(profile)
        eigen = negative_spectrum(assemble_operator(profile, grid))
    rel, err = integrate_k(lambda k: np.log(density_ratio(profile, k * k)), a, b, tol=tol)
    free, err_f = free_log_integral(a, b)
    corr = free - 2.0 * math.log(4.0) * (math.sqrt(b) - math.sqrt(a))
    qminus = profile.negative_part_sup()
    return SumRuleReport(
        interval=(a, b),
        lhs_entropy=free + rel,
        lhs_correction=corr,
        potential_term=-0.5 * math.pi * profile.integral_00(2.0),
        eigen_term=-2.0 * math.pi * eigen.sum_sqrt,
        depth_term=-2.0 * math.pi * math.sqrt(qminus),
        relative_entropy_variant=rel,
        quadrature_error=err + err_f,
        eigenvalues=eigen.eigenvalues,
        constants=dimension_constants(d, a, b, qminus),
        meta={"eigen_method": eigen.method, "grid": dict(eigen.grid)},
    )


def radial_profile(v: PotentialProfile, d: int, truncate: float) -> PotentialProfile:
    """``Q = V + (d-1)(d-3)/(4 r^2)`` cut off at ``r = truncate``."""
    c = centrifugal_coefficient(d)
    if c == 0:
        return v
    from .potential import make_piece

    tail = PotentialProfile.from_pieces([make_piece(1, truncate, "centrifugal", [c])])
    return v.plus(tail).truncated(truncate)


def radial_sum_rule_check(
    v: PotentialProfile, d: int, a: float = 0.5, b: float = 20.0, tail: float = 100.0, grid: Grid | None = None
) -> SumRuleReport:
    """Radial reduction of the sum rule in dimension ``d`` (``l = 0`` channel).

    The channel potential ``Q = V + (d-1)(d-3)/(4 r^2)`` is truncated at
    ``R_V + tail`` when ``d`` is not 1 or 3.  The right side uses ``V``:
    ``-(pi/2) int_2^inf V dr - 2 pi sum sqrt|l| - 2 pi (||V_-|| + 1/4)^{1/2} - (d-1)(d-3)/8``
    (weighted integrals taken per unit solid angle).
    """
    cut = max(float(v.support_end), 2.0) + tail
    q = radial_profile(v, d, cut)
    base = sum_rule_check(q, a, b, grid=grid, d=d)
    vminus = v.negative_part_sup()
    c = float(centrifugal_coefficient(d))
    report = SumRuleReport(
        interval=(a, b),
        lhs_entropy=base.lhs_entropy,
        lhs_correction=base.lhs_correction,
        potential_term=-0.5 * math.pi * v.integral_00(2.0),
        eigen_term=base.eigen_term,
        depth_term=-2.0 * math.pi * math.sqrt(vminus + 0.25),
        relative_entropy_variant=base.relative_entropy_variant,
        quadrature_error=base.quadrature_error,
        eigenvalues=base.eigenvalues,
        extra_term=-c / 2.0,
        constants=dimension_constants(d, a, b, vminus),
        meta={**base.meta, "truncation": cut if c != 0 else None},
    )
    return report


# --- relative entropy ---------------------------------------------------------------


@dataclass(frozen=True)
class MeasurePair:
    """Two finite measures on ``[x[0], x[-1]]``: density samples on a common grid plus atoms."""

    x: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    rho_atoms: tuple = ()
    nu_atoms: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        for name in ("rho", "nu"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != x.shape:
                raise ValueError(f"{name} samples do not match the grid")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative density")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "x", x)
        for name in ("rho_atoms", "nu_atoms"):
            atoms = tuple((float(p), float(m)) for p, m in getattr(self, name))
            for p, m in atoms:
                if not x[0] <= p <= x[-1] or m < 0:
                    raise ValueError(f"atom ({p}, {m}) outside the interval or with negative mass")
            object.__setattr__(self, name, atoms)

    def masses(self) -> tuple[float, float]:
        r = float(integrate.trapezoid(self.rho, self.x)) + sum(m for _, m in self.rho_atoms)
        n = float(integrate.trapezoid(self.nu, self.x)) + sum(m for _, m in self.nu_atoms)
        return r, n

    def moments(self, degree: int = 4) -> np.ndarray:
        """Polynomial moments ``int t^j d rho`` and ``int t^j d nu`` for ``j <= degree``."""
        t = (self.x - self.x[0]) / max(self.x[-1] - self.x[0], 1e-300)
        out = []
        for dens, atoms in ((self.rho, self.rho_atoms), (self.nu, self.nu_atoms)):
            for j in range(degree + 1):
                val = float(integrate.trapezoid(dens * t**j, self.x))
                val += sum(m * ((p - self.x[0]) / (self.x[-1] - self.x[0])) ** j for p, m in atoms)
                out.append(val)
        return np.array(out)


def relative_entropy(pair: MeasurePair, tol: float = 1e-12) -> float:
    """``S(rho|nu) = -int log(d rho/d nu) d rho``, or ``-inf`` if ``rho`` is not ``nu``-a.c."""
    nu_pos = {p: m for p, m in pair.nu_atoms if m > 0}
    total = 0.0
    for p, m in pair.rho_atoms:
        if m <= 0:
            continue
        match = [q for q in nu_pos if abs(q - p) <= tol * max(1.0, abs(p))]
        if not match:
            return NEG_INF
        total -= m * math.log(m / nu_pos[match[0]])
    scale = max(float(np.max(pair.rho, initial=0.0)), 1e-300)
    support = pair.rho > tol * scale
    if np.any(support & (pair.nu <= 0)):
        # rho charges a region where nu has no density
        bad = support & (pair.nu <= 0)
        if _positive_measure(pair.x, bad):
            return NEG_INF
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(support & (pair.nu > 0), pair.rho * np.log(pair.rho / pair.nu), 0.0)
    total -= float(integrate.trapezoid(integrand, pair.x))
    return total


def _positive_measure(x: np.ndarray, mask: np.ndarray) -> bool:
    if not mask.any():
        return False
    idx = np.flatnonzero(mask)
    left = np.clip(idx - 1, 0, x.size - 1)
    right = np.clip(idx + 1, 0, x.size - 1)
    return float(np.sum(0.5 * (x[right] - x[left]))) > 0


def semicontinuity_check(
    sequence: Sequence[MeasurePair], limit: MeasurePair, tol: float = 1e-9, pretest_tol: float = 1e-2
) -> dict:
    """Check ``S(rho|nu) >= limsup S(rho_n|nu_n)`` on a weak-* convergent sequence.

    The weak-* pretest compares polynomial moments of the last member with the
    limit; if they disagree by more than ``pretest_tol`` the verdict is
    ``inconclusive``.  The limsup is taken over the second half of the sequence.
    """
    values = [relative_entropy(p) for p in sequence]
    s_lim = relative_entropy(limit)
    ref = limit.moments()
    gaps = [float(np.max(np.abs(p.moments() - ref))) for p in sequence]
    scale = max(1.0, float(np.max(np.abs(ref))))
    weak_ok = gaps[-1] <= pretest_tol * scale and gaps[-1] <= gaps[0] + 1e-15
    tail = values[len(values) // 2 :]
    limsup = max(tail)
    if not weak_ok:
        verdict = "inconclusive"
    elif s_lim == NEG_INF:
        # -inf >= limsup requires the sequence to run off to -inf
        diverging = limsup == NEG_INF or all(b < a for a, b in zip(tail, tail[1:]))
        verdict = "pass" if diverging else "fail"
    else:
        verdict = "pass" if s_lim >= limsup - tol else "fail"
    return {
        "values": values,
        "limit": s_lim,
        "limsup": limsup,
        "moment_gaps": gaps,
        "verdict": verdict,
        "strict": s_lim > limsup,
    }


def weighted_measure_pair(lam: np.ndarray, density: np.ndarray, a: float, b: float) -> MeasurePair:
    """``rho = chi_[a,b] l^{-1/2} dl`` against ``nu = mu`` on ``[a, b]``.

    ``S(rho|nu) = int_a^b log(mu' l^{1/2}) l^{-1/2} dl``, so upper semicontinuity
    of ``S`` is the weighted log-integral inequality.
    """
    lam = np.asarray(lam, dtype=float)
    sel = (lam >= a) & (lam <= b)
    x = lam[sel]
    return MeasurePair(x, x**-0.5, np.asarray(density, dtype=float)[sel])


def weighted_log_integral(lam: np.ndarray, density: np.ndarray, a: float, b: float) -> float:
    """Trapezoid value of ``int_a^b log(mu') l^{-1/2} dl`` on samples (used with :func:`weighted_measure_pair`)."""
    lam = np.asarray(lam, dtype=float)
    sel = (lam >= a) & (lam <= b)
    x, dens = lam[sel], np.asarray(density, dtype=float)[sel]
    with np.errstate(divide="ignore"):
        return float(integrate.trapezoid(np.log(dens) * x**-0.5, x))
