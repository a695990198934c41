"""Spectral measure of ``f = chi_[1,2] e0``: Stieltjes transform and a.c. density.

Two routes to the density on ``lambda > 0``:

* ``density_jost`` integrates the Jost solution back from the end of the
  support.  For ``k = sqrt(lambda)`` and ``Q e0 = 0`` on ``[1, 2]``

      mu'(lambda) = mu'_free(lambda) * [(J(1) J(1)^*)^{-1}]_00,

  and for general scalar ``Q`` it uses ``(k/pi) |int_1^2 phi|^2 / |J(1)|^2``
  with the regular solution ``phi``.
* ``density_resolvent_limit`` takes ``Im((T - lambda - i eps)^{-1} f, f) / pi``
  for a few ``eps`` and extrapolates to ``eps -> 0``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from ._jost import jost_scalar, regular_integral_scalar
from .operator import DiscreteOperator, Grid, assemble_operator
from .potential import HypothesisViolation, PotentialProfile, ProfileError

DENSITY_FLOOR = 1e-300
ODE_STEP = 1e-3


class SpectralError(RuntimeError):
    pass


# --- free case ------------------------------------------------------------------


def free_density(lam):
    """``(1 - cos sqrt(lam))^2 / (pi lam^{3/2})``; total mass 1."""
    lam = np.asarray(lam, dtype=float)
    k = np.sqrt(lam)
    # 1 - cos k = 2 sin^2(k/2) avoids cancellation for small k
    one_minus_cos = 2.0 * np.sin(0.5 * k) ** 2
    return one_minus_cos**2 / (np.pi * lam**1.5)


def free_stieltjes(z: complex) -> complex:
    """Closed form of ``int mu'_free(t) / (t - z) dt``.

    With ``kappa = sqrt(z)``, ``Im kappa > 0``, the free resolvent kernel
    ``sin(kappa (r_< - 1)) exp(i kappa (r_> - 1)) / kappa`` integrated twice
    over ``[1, 2]`` gives the expression below.
    """
    z = complex(z)
    kap = cmath.sqrt(z)
    if kap.imag < 0:
        kap = -kap
    ik = 1j * kap
    return (2.0 / kap**2) * ((cmath.exp(ik) - 1) / ik - (cmath.exp(2 * ik) - 1) / (4 * ik) - 0.5)


def free_stieltjes_quad(z: complex) -> complex:
    """Oracle for :func:`free_stieltjes` by adaptive quadrature in ``k = sqrt(t)``."""
    z = complex(z)

    def part(fn):
        # t = k^2, dt = 2k dk; split at zeros k = 2 pi m and integrate to k = 400
        pts = [0.0] + [2 * math.pi * m for m in range(1, 64)] + [400.0]
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            total += integrate.quad(fn, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        return total

    def g(k):
        t = k * k
        return 2.0 * (1 - math.cos(k)) ** 2 / (math.pi * max(k, 1e-300) ** 2) / (t - z) if k > 0 else 0.0

    re = part(lambda k: g(k).real)
    im = part(lambda k: g(k).imag)
    # tail beyond t = T = 400^2: mu' ~ 3/(2 pi) t^{-3/2} on average and 1/(t-z) ~ 1/t,
    # so the remainder is 1/(pi T^{3/2})
    tail = 1.0 / (math.pi * 400.0**3)
    return complex(re + tail, im)


# --- Stieltjes transform ----------------------------------------------------------


@dataclass(frozen=True)
class StieltjesSample:
    z: complex
    value: complex

    def __post_init__(self):
        if self.z.imag == 0:
            raise SpectralError("Stieltjes transform needs Im z != 0")
        if not self.value.imag * self.z.imag > 0:
            raise SpectralError(f"Herglotz property violated at z={self.z}: value {self.value}")

    def to_json(self) -> dict:
        return {"z": [self.z.real, self.z.imag], "value": [self.value.real, self.value.imag]}


def source_vector(op: DiscreteOperator) -> np.ndarray:
    """``f = chi_[1,2] e0`` on the interior nodes (trapezoid weight 1/2 at ``r = 2``)."""
    r = op.r
    w = np.where(r < 2.0, 1.0, 0.0)
    w[np.isclose(r, 2.0, rtol=0, atol=1e-9 * op.h)] = 0.5
    f = np.zeros((r.size, op.n))
    f[:, 0] = w
    return f


def outgoing_root(z: complex, h: float, kinetic: float = 1.0) -> complex:
    """Root ``|zeta| < 1`` of ``zeta + 1/zeta = 2 - h^2 z / kinetic`` (decaying discrete free wave)."""
    b = 2.0 - h * h * complex(z) / kinetic
    disc = cmath.sqrt(b * b - 4.0)
    z1, z2 = 0.5 * (b + disc), 0.5 * (b - disc)
    return z1 if abs(z1) < abs(z2) else z2


def _banded_shifted(op: DiscreteOperator, z: complex, boundary: str) -> np.ndarray:
    ab = op.banded().astype(complex)
    n = op.n
    ab[n, :] -= z
    if boundary == "outgoing":
        if not op.r[-1] > op.support_end:
            raise SpectralError("outgoing boundary needs the grid to extend past the potential support")
        zeta = outgoing_root(z, op.h, op.kinetic)
        ab[n, -n:] += op.off * zeta
    elif boundary != "dirichlet":
        raise ValueError(f"unknown boundary {boundary!r}")
    return ab


def _upper_to_general(ab: np.ndarray) -> np.ndarray:
    """Convert symmetric upper-banded storage to ``solve_banded`` (l, u) storage."""
    u = ab.shape[0] - 1
    size = ab.shape[1]
    full = np.zeros((2 * u + 1, size), dtype=ab.dtype)
    full[: u + 1] = ab
    for k in range(1, u + 1):
        # lower diagonal -k equals upper diagonal +k (complex symmetric)
        full[u + k, : size - k] = ab[u - k, k:]
    return full


def resolve(op: DiscreteOperator, z: complex, f: np.ndarray | None = None, boundary: str = "dirichlet") -> np.ndarray:
    """Solve ``(T - z) u = f``; returns ``u`` with shape ``(M, n)``."""
    z = complex(z)
    if f is None:
        f = source_vector(op)
    ab = _upper_to_general(_banded_shifted(op, z, boundary))
    u = op.n
    try:
        sol = linalg.solve_banded((u, u), ab, f.reshape(-1).astype(complex))
    except (linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"singular elimination at z={z}: {exc}") from exc
    return sol.reshape(f.shape)


def inner(op: DiscreteOperator, u: np.ndarray, v: np.ndarray) -> complex:
    """Discrete ``(u, v) = h sum u conj(v)``."""
    return complex(op.h * np.sum(u * np.conj(v)))


def stieltjes(op: DiscreteOperator, z: complex, boundary: str = "dirichlet") -> StieltjesSample:
    f = source_vector(op)
    u = resolve(op, z, f, boundary)
    return StieltjesSample(complex(z), inner(op, u, f))


def hilbert_identity_residual(op1: DiscreteOperator, op2: DiscreteOperator, z: complex) -> dict:
    """Both sides of ``((R1 - R2) f, f) = ((V2 - V1) R1 f, R2(conj z) f)``."""
    f = source_vector(op1)
    u1 = resolve(op1, z, f)
    u2 = resolve(op2, z, f)
    u2bar = resolve(op2, np.conj(z), f)
    lhs = inner(op1, u1, f) - inner(op2, u2, f)
    dv = op2.potential - op1.potential
    rhs = inner(op1, np.einsum("ijk,ik->ij", dv, u1), u2bar)
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs)}


def resolvent_bound_check(op: DiscreteOperator, z: complex) -> dict:
    """Discrete H^1 norm of ``u = (T - z)^{-1} f`` against the resolvent bound.

    ``||u||_{H^1}^2 = h sum |u|^2 + h sum |D+ u|^2`` (differences include the
    Dirichlet end nodes), ``C = sqrt((3/2 + |Re z| + ||V||)/|Im z|^2 + 1/2)``.
    """
    z = complex(z)
    f = source_vector(op)
    u = resolve(op, z, f)
    padded = np.vstack([np.zeros((1, op.n)), u, np.zeros((1, op.n))])
    du = np.diff(padded, axis=0) / op.h
    h1 = math.sqrt(op.h * float(np.sum(np.abs(u) ** 2) + np.sum(np.abs(du) ** 2)))
    if op.n == 1:
        vnorm = float(np.max(np.abs(op.potential), initial=0.0))
    else:
        vnorm = float(np.max(np.abs(np.linalg.eigvalsh(op.potential)), initial=0.0))
    c = math.sqrt((1.5 + abs(z.real) + vnorm) / z.imag**2 + 0.5)
    fnorm = math.sqrt(op.h * float(np.sum(f**2)))
    value = inner(op, u, f)
    return {
        "z": z,
        "h1_norm": h1,
        "bound": c * fnorm,
        "C": c,
        "passed": h1 <= c * fnorm,
        "herglotz": value.imag * z.imag > 0,
        "value": value,
    }


# --- densities ------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDensity:
    lambda_grid: np.ndarray
    density: np.ndarray
    method: str
    epsilon: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.lambda_grid, dtype=float)
        dens = np.asarray(self.density, dtype=float)
        if lam.ndim != 1 or lam.shape != dens.shape:
            raise SpectralError("lambda grid and density must be 1-D arrays of equal length")
        if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise SpectralError("lambda grid must be positive and increasing")
        if np.any(dens < -1e-9 * max(1.0, float(np.max(np.abs(dens), initial=0.0)))):
            raise SpectralError("density has negative values")
        dens = np.maximum(dens, DENSITY_FLOOR)
        lam.setflags(write=False)
        dens.setflags(write=False)
        object.__setattr__(self, "lambda_grid", lam)
        object.__setattr__(self, "density", dens)

    def mass(self) -> float:
        return float(integrate.trapezoid(self.density, self.lambda_grid))

    def to_csv(self) -> str:
        rows = ["lambda,density"]
        rows += [f"{a:.17g},{b:.17g}" for a, b in zip(self.lambda_grid, self.density)]
        return "\n".join(rows) + "\n"


def default_lambda_grid(lo: float = 0.05, hi: float = 100.0, count: int = 2000, window: float = 1e-4) -> np.ndarray:
    """Geometric grid plus points clustered around the free-density zeros ``(2 pi m)^2``."""
    base = np.geomspace(lo, hi, count)
    extra = []
    m = 1
    while (2 * math.pi * m) ** 2 < hi:
        z0 = (2 * math.pi * m) ** 2
        extra.extend(z0 + s * window * np.geomspace(1, 1e3, 12) for s in (-1, 1))
        m += 1
    pts = np.concatenate([base] + extra) if extra else base
    pts = pts[(pts >= lo) & (pts <= hi)]
    return np.unique(pts)


def _stages(profile: PotentialProfile, start: float, stop: float, h_max: float):
    """Potential values at RK4 stage points between ``start`` and ``stop``.

    Steps never straddle a piece boundary; values come from the piece on the
    side being integrated, so jumps are handled exactly.
    """
    n = profile.channel_dim
    lo, hi = min(start, stop), max(start, stop)
    segs = []
    for p in profile.pieces:
        s, e = p.interval
        a, b = max(s, lo), min(e, hi)
        if b > a:
            segs.append((a, b, p))
    if not segs:
        segs = [(lo, hi, None)]
    forward = stop > start
    if not forward:
        segs = segs[::-1]
    qs, hs = [], []
    for a, b, p in segs:
        m = max(1, int(math.ceil((b - a) / h_max - 1e-9)))
        edges = np.linspace(a, b, m + 1)
        if not forward:
            edges = edges[::-1]
        r0, r1 = edges[:-1], edges[1:]
        rm = 0.5 * (r0 + r1)
        if p is None:
            vals = np.zeros((3, m, n, n))
        else:
            vals = np.stack([p.evaluate(r, n) for r in (r0, rm, r1)])
        qs.append(np.moveaxis(vals, 0, 1))
        hs.append(r1 - r0)
    return np.concatenate(qs), np.concatenate(hs)


def _ode_step(k_max: float) -> float:
    return min(ODE_STEP, 0.01 / max(k_max, 1e-12))


def jost_at_one(profile: PotentialProfile, k: np.ndarray):
    """Jost solution ``J`` and ``J'`` at ``r = 1``, shape ``(len(k), n, n)``."""
    if not profile.is_compact:
        raise ProfileError("Jost construction needs a compactly supported potential")
    k = np.asarray(k, dtype=float)
    n = profile.channel_dim
    R = float(profile.support_end)
    if R <= 1.0:
        e = np.exp(1j * k)[:, None, None] * np.eye(n)
        return e, 1j * k[:, None, None] * e
    hs = _ode_step(float(np.max(k)))
    q, steps = _stages(profile, R, 1.0, hs)
    if n == 1:
        u, p = jost_scalar(k, R, np.ascontiguousarray(q[:, :, 0, 0]), steps)
        return u[:, None, None], p[:, None, None]
    return _jost_matrix(k, R, q, steps)


def _jost_matrix(k, R, q, steps):
    n = q.shape[-1]
    eye = np.eye(n)
    k2 = (k**2)[:, None, None]
    u = np.exp(1j * k * R)[:, None, None] * eye
    p = 1j * k[:, None, None] * u
    for j in range(steps.shape[0]):
        h = steps[j]
        q0, qm, q1 = (q[j, s] - k2 * eye for s in range(3))
        a1, b1 = p, q0 @ u
        a2, b2 = p + 0.5 * h * b1, qm @ (u + 0.5 * h * a1)
        a3, b3 = p + 0.5 * h * b2, qm @ (u + 0.5 * h * a2)
        a4, b4 = p + h * b3, q1 @ (u + h * a3)
        u = u + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        p = p + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
    return u, p


def density_ratio(profile: PotentialProfile, lam) -> np.ndarray:
    """``mu'(lambda) / mu'_free(lambda) = [(J(1) J(1)^*)^{-1}]_00``; needs ``Q e0 = 0`` on ``[1, 2]``."""
    profile.check_e0_hypothesis(2.0)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise SpectralError("density requires lambda > 0")
    J, _ = jost_at_one(profile, np.sqrt(lam))
    G = J @ np.conj(np.swapaxes(J, 1, 2))
    if G.shape[1] == 1:
        return 1.0 / G[:, 0, 0].real
    return np.linalg.inv(G)[:, 0, 0].real


def wronskian_defect(profile: PotentialProfile, lam) -> np.ndarray:
    """``|J^* J' - J'^* J - 2ik I|`` at ``r = 1``; zero for an exact Jost solution."""
    k = np.sqrt(np.asarray(lam, dtype=float))
    J, P = jost_at_one(profile, k)
    Jh, Ph = np.conj(np.swapaxes(J, 1, 2)), np.conj(np.swapaxes(P, 1, 2))
    w = Jh @ P - Ph @ J - 2j * k[:, None, None] * np.eye(J.shape[1])
    return np.max(np.abs(w), axis=(1, 2))


def density_jost(profile: PotentialProfile, lambda_grid) -> SpectralDensity:
    lam = np.asarray(lambda_grid, dtype=float)
    if np.any(lam <= 0):
        raise SpectralError("density_jost rejects lambda <= 0")
    try:
        ratio = density_ratio(profile, lam)
        dens = free_density(lam) * ratio
        variant = "free-on-[1,2]"
    except HypothesisViolation:
        if profile.channel_dim != 1:
            raise
        k = np.sqrt(lam)
        J, _ = jost_at_one(profile, k)
        q, steps = _stages(profile, 1.0, 2.0, _ode_step(float(np.max(k))))
        overlap = regular_integral_scalar(k, np.ascontiguousarray(q[:, :, 0, 0]), steps)
        dens = k / np.pi * overlap**2 / np.abs(J[:, 0, 0]) ** 2
        variant = "regular-overlap"
    defect = float(np.max(wronskian_defect(profile, lam[[0, -1]]) / np.sqrt(lam[[0, -1]])))
    if defect > 1e-6:
        raise SpectralError(f"Wronskian drift {defect:.3g}: ODE step too coarse or solution underflow")
    return SpectralDensity(lam, dens, "jost-exact", None, {"variant": variant, "wronskian_defect": defect})


def _resolvent_grid(profile: PotentialProfile, step: float, margin: float = 0.5) -> Grid:
    end = max(2.0, float(profile.support_end)) + margin
    return Grid(end, step)


def density_resolvent_limit(
    op: DiscreteOperator,
    lambda_grid,
    epsilon: float,
    levels: int = 3,
    boundary: str = "outgoing",
) -> SpectralDensity:
    """``Im stieltjes(lambda + i eps) / pi`` extrapolated over ``eps, eps/2, ...``.

    ``levels = 1`` returns the raw smoothed value (bias O(eps)).  Richardson
    extrapolation with ratio 2 removes the O(eps), O(eps^2), ... terms.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    lam = np.asarray(lambda_grid, dtype=float)
    f = source_vector(op)
    eps = [epsilon / 2**j for j in range(levels)]
    table = np.empty((levels, lam.size))
    for j, e in enumerate(eps):
        for i, x in enumerate(lam):
            u = resolve(op, complex(x, e), f, boundary)
            table[j, i] = inner(op, u, f).imag / math.pi
    est = richardson(table, 2.0)
    return SpectralDensity(lam, np.maximum(est, 0.0), "resolvent-limit", epsilon, {"levels": levels, "boundary": boundary})


def density_resolvent_extrapolated(
    profile: PotentialProfile,
    lambda_grid,
    epsilon: float = 1e-3,
    levels: int = 3,
    steps=(2e-4, 1e-4),
) -> SpectralDensity:
    """Resolvent-limit density extrapolated in ``eps`` and then in the grid step (second order).

    Halving steps keeps the roundoff of the ``h^{-2}`` matrix small; the
    ``O(h^2)`` term is removed by Richardson over ``steps``.
    """
    steps = tuple(float(s) for s in steps)
    if any(abs(b - a / 2) > 1e-12 * a for a, b in zip(steps, steps[1:])):
        raise ValueError("steps must halve successively")
    table = [density_resolvent_limit(resolvent_density_operator(profile, s), lambda_grid, epsilon, levels).density
             for s in steps]
    est = richardson(np.array(table), 2.0, order=2) if len(table) > 1 else table[0]
    meta = {"levels": levels, "boundary": "outgoing", "steps": list(steps)}
    return SpectralDensity(np.asarray(lambda_grid, dtype=float), np.maximum(est, 0.0), "resolvent-limit", epsilon, meta)


def richardson(table: np.ndarray, ratio: float = 2.0, order: int = 1) -> np.ndarray:
    """Neville-style elimination of the error terms ``c_p t^p``, ``p = order, order+1, ...``.

    ``table[j]`` is the estimate at parameter ``t / ratio**j``.
    """
    rows = [np.asarray(r, dtype=float) for r in table]
    p = order
    while len(rows) > 1:
        fac = ratio**p
        rows = [(fac * rows[j + 1] - rows[j]) / (fac - 1.0) for j in range(len(rows) - 1)]
        p += 1
    return rows[0]


def resolvent_density_operator(profile: PotentialProfile, step: float = 2e-5) -> DiscreteOperator:
    """Operator on ``[1, max(2, R_Q) + 0.5]`` for the outgoing-boundary density route."""
    return assemble_operator(profile, _resolvent_grid(profile, step))


# --- weak-* convergence -------------------------------------------------------------


def smooth_step(t):
    """C^infinity ``theta``: 1 for ``t <= 0``, 0 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    out[t <= 0] = 1.0
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    a = np.exp(-1.0 / (1.0 - tm))
    b = np.exp(-1.0 / tm)
    out[mid] = a / (a + b)
    return out


def smooth_step_derivative(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    a = np.exp(-1.0 / (1.0 - tm))
    b = np.exp(-1.0 / tm)
    da = -a / (1.0 - tm) ** 2
    db = b / tm**2
    out[mid] = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return out


def chi_family(v: np.ndarray, w_minus: np.ndarray, r: np.ndarray, n: float) -> np.ndarray:
    """``V_n = (1 - chi_n) W_- + V`` with ``chi_n`` the indicator of ``r < n``."""
    return v + np.where(r >= n, w_minus, 0.0)


def theta_family(v, w_minus, a_field, r, n: float, R: float) -> np.ndarray:
    """``V_n = theta_n (W_- + V) + |theta_n' A| + theta_n' A - chi_R W_-`` with ``theta_n = theta(r - n)``."""
    th = smooth_step(r - n)
    dth = smooth_step_derivative(r - n)
    return th * (w_minus + v) + np.abs(dth * a_field) + dth * a_field - np.where(r < R, w_minus, 0.0)


def theta_limit(v, w_minus, r, R: float) -> np.ndarray:
    return np.where(r >= R, w_minus, 0.0) + v


def weakstar_convergence_check(family: dict, limit: np.ndarray, grid: Grid, zs=(1j, 1 + 1j, 10 + 1j), tol: float = 1e-6) -> dict:
    """Stieltjes differences ``|S(V_n, z) - S(V, z)|`` along a schedule of ``n``.

    ``family`` maps ``n`` to node samples of ``V_n``; ``limit`` holds samples of ``V``.
    """
    ref = DiscreteOperator.from_samples(grid, limit)
    base = {z: stieltjes(ref, z).value for z in zs}
    rows = []
    for n in sorted(family):
        op = DiscreteOperator.from_samples(grid, family[n])
        diffs = {z: abs(stieltjes(op, z).value - base[z]) for z in zs}
        rows.append({"n": n, "diff": [diffs[z] for z in zs]})
    last = rows[-1]["diff"] if rows else [0.0] * len(zs)
    converged = all(d < tol for d in last)
    return {"z": [complex(z) for z in zs], "rows": rows, "converged": converged, "tol": tol}
