"""Partition of unity subordinate to a filled layer system and the assembled decomposition.

Positions are kept in node-index units; breakpoints (thirds of overlap
ranges) are exact :class:`fractions.Fraction` values.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate

from .entropy import sphere_area
from .layers import LayerSystem, _overlap, channel_samples, range_bottom
from .potential import PotentialProfile
from .riccati import RiccatiError, decompose, dirichlet_bottom


class PartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Ramp:
    """Middle third ``[p, q]`` (node units) of an overlap ``[lo, hi]`` between two sets."""

    lo: int
    hi: int
    p: Fraction
    q: Fraction
    sets: tuple  # (("layer"|"gap", index), ("layer"|"gap", index)) left to right by start

    def rising(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - float(self.p)) / float(self.q - self.p), 0.0, 1.0)

    def slope(self, h: float) -> float:
        """``|theta'|`` on the ramp in ``r`` units."""
        return 1.0 / (float(self.q - self.p) * h)

    def gradient_integral(self, h: float) -> float:
        """``int theta'^2 dr = 3 / w`` for an overlap of width ``w``."""
        return 3.0 / ((self.hi - self.lo) * h)


@dataclass(frozen=True)
class PartitionOfUnity:
    system: LayerSystem
    ramps: tuple
    owners: tuple  # owner set of each theta_j, j = 0..len(ramps)

    @property
    def h(self) -> float:
        return self.system.h

    def theta(self, j: int, x: np.ndarray) -> np.ndarray:
        """``theta_j`` at node positions ``x`` (node units)."""
        out = np.ones_like(x, dtype=float)
        if j > 0:
            out = out * self.ramps[j - 1].rising(x)
        if j < len(self.ramps):
            out = out * (1.0 - self.ramps[j].rising(x))
        return out

    def theta_slope(self, j: int, x: np.ndarray) -> np.ndarray:
        """``theta_j'`` in ``r`` units (zero exactly at breakpoints is irrelevant: nodes near them are excluded)."""
        out = np.zeros_like(x, dtype=float)
        h = self.h
        if j > 0:
            rp = self.ramps[j - 1]
            out += np.where((x > float(rp.p)) & (x < float(rp.q)), rp.slope(h), 0.0)
        if j < len(self.ramps):
            rp = self.ramps[j]
            out -= np.where((x > float(rp.p)) & (x < float(rp.q)), rp.slope(h), 0.0)
        return out

    def support(self, j: int) -> tuple[Fraction, Fraction]:
        lo = self.ramps[j - 1].p if j > 0 else Fraction(0)
        hi = self.ramps[j].q if j < len(self.ramps) else Fraction(self.system.n_nodes)
        return lo, hi

    def functions(self, x: np.ndarray | None = None) -> dict:
        """``{"phi": [...], "psi": [...]}`` node arrays, one per layer / gap (sum of owned thetas)."""
        if x is None:
            x = np.arange(self.system.n_nodes + 1, dtype=float)
        phi = [np.zeros_like(x, dtype=float) for _ in self.system.layers]
        psi = [np.zeros_like(x, dtype=float) for _ in self.system.gaps]
        for j, (kind, idx) in enumerate(self.owners):
            (phi if kind == "layer" else psi)[idx] += self.theta(j, x)
        return {"phi": phi, "psi": psi}

    def breakpoints(self) -> list[Fraction]:
        return sorted({b for rp in self.ramps for b in (rp.p, rp.q)})

    def to_csv(self, stride: int = 1) -> str:
        x = np.arange(0, self.system.n_nodes + 1, stride, dtype=float)
        f = self.functions(x)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r"] + [f"phi_{i}" for i in range(len(f["phi"]))] + [f"psi_{i}" for i in range(len(f["psi"]))])
        r = 1.0 + self.h * x
        for i in range(x.size):
            w.writerow([f"{r[i]:.17g}"] + [f"{a[i]:.17g}" for a in f["phi"]] + [f"{a[i]:.17g}" for a in f["psi"]])
        return buf.getvalue()


def _sets(system: LayerSystem):
    items = [("layer", i, l) for i, l in enumerate(system.layers)]
    items += [("gap", i, g) for i, g in enumerate(system.gaps)]
    return items


def build_partition(system: LayerSystem) -> PartitionOfUnity:
    """Middle-thirds cutoffs on the ordered overlaps of a filled system."""
    if not system.filled:
        raise PartitionError("partition requires a gap-filled layer system")
    items = _sets(system)
    ramps = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            a, b = items[i][2], items[j][2]
            ov = _overlap(a, b)
            if ov is None or ov == 0:
                continue
            lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
            left, right = sorted([items[i], items[j]], key=lambda t: (t[2].lo, t[2].hi))
            third = Fraction(hi - lo, 3)
            ramps.append(Ramp(lo, hi, lo + third, hi - third, ((left[0], left[1]), (right[0], right[1]))))
    ramps.sort(key=lambda rp: (rp.lo, rp.hi))
    for a, b in zip(ramps, ramps[1:]):
        if b.lo < a.hi:
            raise PartitionError(f"internal: overlaps [{a.lo}, {a.hi}] and [{b.lo}, {b.hi}] are not ordered")
    # owner of theta_j: the set containing its support
    owners = []
    for j in range(len(ramps) + 1):
        lo = ramps[j - 1].p if j > 0 else Fraction(0)
        hi = ramps[j].q if j < len(ramps) else Fraction(system.n_nodes)
        holders = [(kind, idx) for kind, idx, s in items if s.lo <= lo and hi <= s.hi]
        if not holders:
            raise PartitionError(f"internal: cutoff {j} with support [{float(lo)}, {float(hi)}] lies in no set")
        holders.sort(key=lambda t: (t[0] != "layer", t[1]))
        owners.append(holders[0])
    return PartitionOfUnity(system, tuple(ramps), tuple(owners))


def partition_certificates(pu: PartitionOfUnity, nodes: int | None = None) -> dict:
    """Sum-to-one at the nodes, per-overlap gradient bounds and the total gradient bound."""
    system, h = pu.system, pu.h
    x = np.arange(system.n_nodes + 1, dtype=float)
    f = pu.functions(x)
    total = np.sum(f["phi"], axis=0) + (np.sum(f["psi"], axis=0) if f["psi"] else 0.0)
    sum_err = float(np.max(np.abs(total - 1.0)))
    per = []
    for rp in pu.ramps:
        eps_list = [system.layers[idx].eps for kind, idx in rp.sets if kind == "layer"]
        layer_ids = [idx for kind, idx in rp.sets if kind == "layer"]
        if len(layer_ids) == 2:
            k = min(layer_ids)
            eps_k = system.layers[k].eps
        else:
            eps_k = eps_list[0]
        g = rp.gradient_integral(h)
        # quadrature cross-check on a fine sub-grid of the ramp
        xs = np.linspace(float(rp.lo), float(rp.hi), 3001)
        th = rp.rising(xs)
        g_quad = float(integrate.trapezoid(np.gradient(th, xs * h) ** 2, xs * h))
        per.append({"overlap": [system.r(rp.lo), system.r(rp.hi)], "gradient": g, "gradient_quad": g_quad,
                    "bound": 18.0 * math.sqrt(eps_k), "ok": g <= 18.0 * math.sqrt(eps_k)})
    # each overlap carries one rising and one falling cutoff
    total_grad = 2.0 * math.fsum(p["gradient"] for p in per)
    sum_eps = math.fsum(math.sqrt(l.eps) for l in system.layers)
    supports_ok = _supports_ok(pu)
    return {
        "sum_to_one_max_error": sum_err,
        "sum_to_one_ok": sum_err <= 1e-12,
        "per_overlap": per,
        "per_overlap_ok": all(p["ok"] for p in per),
        "total_gradient": total_grad,
        "total_bound": 72.0 * sum_eps,
        "total_ok": total_grad <= 72.0 * sum_eps,
        "supports_ok": supports_ok,
        "middle_thirds_ok": all(rp.q - rp.p == Fraction(rp.hi - rp.lo, 3) for rp in pu.ramps),
    }


def _supports_ok(pu: PartitionOfUnity) -> bool:
    items = {("layer", i): l for i, l in enumerate(pu.system.layers)}
    items.update({("gap", i): g for i, g in enumerate(pu.system.gaps)})
    for j, owner in enumerate(pu.owners):
        lo, hi = pu.support(j)
        s = items[owner]
        if not (s.lo <= lo and hi <= s.hi):
            return False
    return True


# --- assembly -------------------------------------------------------------------------------


@dataclass(frozen=True)
class AssembledDecomposition:
    r: np.ndarray
    A: np.ndarray
    p: np.ndarray
    V1: np.ndarray
    W_tilde: np.ndarray
    div_A: np.ndarray
    identity_residual: float
    riccati_residual: float
    norms: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "identity_residual": self.identity_residual,
            "riccati_residual": self.riccati_residual,
            "norms": dict(self.norms),
            "certificates": dict(self.certificates),
        }


def _fd_derivative(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central difference; NaN on the two nodes at each end."""
    out = np.full_like(f, np.nan)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    return out


def _evaluate(f, r):
    if f is None:
        return np.zeros_like(r)
    if isinstance(f, PotentialProfile):
        return f.scalar(r)
    return np.asarray(f(r), dtype=float)


def assemble(system: LayerSystem, pu: PartitionOfUnity, v, w=None, decompositions: dict | None = None) -> AssembledDecomposition:
    """``A = sum(phi_n A_n + psi_m A~_m)``, ``p = -sum eps_n phi_n``, ``V_1 = p + div A + |A|^2``.

    ``A_n`` solves ``V + W + eps_n = div A_n + |A_n|^2`` on ``Omega_n`` and
    ``A~_m`` the ``gamma = 0`` problem on ``Lambda_m`` (a gap whose discrete
    bottom is slightly negative uses ``gamma_m^2 = -bottom`` and contributes
    ``-gamma_m^2 psi_m`` to ``p``).  ``decompositions`` may supply
    precomputed ``{("layer"|"gap", i): RiccatiDecomposition}``.
    """
    h, d = system.h, system.d
    N = system.n_nodes
    r = 1.0 + h * np.arange(N + 1)
    x = np.arange(N + 1, dtype=float)
    vals_v, vals_w = _evaluate(v, r), _evaluate(w, r)
    q = _sum_profile(v, w)
    decompositions = dict(decompositions or {})
    qp, _ = channel_samples(system, v, w)
    levels, support_residual = {}, {}
    sets = [("layer", i, l) for i, l in enumerate(system.layers)] + [("gap", i, g) for i, g in enumerate(system.gaps)]
    for kind, i, s in sets:
        if kind == "layer":
            g2 = s.eps
        else:
            g2 = max(0.0, -range_bottom(qp, s.lo, s.hi, h)) * (1 + 1e-6)
        if (kind, i) in decompositions:
            levels[(kind, i)] = decompositions[(kind, i)].gamma ** 2
            support_residual[(kind, i)] = decompositions[(kind, i)].residual
            continue
        core = [pu.support(j) for j, o in enumerate(pu.owners) if o == (kind, i)]
        core = (min(c[0] for c in core), max(c[1] for c in core)) if core else None
        core = None if core is None else (1.0 + h * float(core[0]), 1.0 + h * float(core[1]))
        dec, g2, worst = _level_decomposition(q, (system.r(s.lo), system.r(s.hi)), g2, d, h, f"{kind} {i}", core)
        decompositions[(kind, i)] = dec
        levels[(kind, i)] = g2
        support_residual[(kind, i)] = worst
    f = pu.functions(x)
    A = np.zeros(N + 1)
    p = np.zeros(N + 1)
    grad_terms = np.zeros(N + 1)  # sum A_n phi_n'
    sq_terms = np.zeros(N + 1)  # sum phi_n |A_n|^2
    local_sq = {}
    for kind, i, s in sets:
        dec = decompositions[(kind, i)]
        An = np.zeros(N + 1)
        An[s.lo : s.hi + 1] = dec.A[: s.hi - s.lo + 1]
        weight = f["phi"][i] if kind == "layer" else f["psi"][i]
        slope = np.zeros(N + 1)
        for j, owner in enumerate(pu.owners):
            if owner == (kind, i):
                slope += pu.theta_slope(j, x)
        A += weight * An
        p -= levels[(kind, i)] * weight
        grad_terms += An * slope
        sq_terms += weight * An**2
        sel = weight > 0
        local_sq[(kind, i)] = float(integrate.trapezoid(np.where(sel, An**2, 0.0), r))
    div_A = _fd_derivative(A, h) + (d - 1) * A / r
    V1 = p + div_A + A**2
    rhs = V1 - grad_terms - A**2 + sq_terms
    residual = vals_v + vals_w - rhs
    mask = np.isfinite(residual)
    for b in pu.breakpoints():
        mask &= np.abs(x - float(b)) > 2.0 + 1e-9
    for xb in _jumps(v) + _jumps(w):
        mask &= np.abs(r - xb) > 2.5 * h
    # the decompositions' own end nodes are one-sided
    for kind, i, s in sets:
        for e in (s.lo, s.hi):
            mask &= np.abs(x - e) > 2.0
    ident = float(np.max(np.abs(residual[mask]))) if mask.any() else 0.0
    W_tilde = vals_v - V1 + p
    fin = np.isfinite(V1)
    wt = lambda g: float(integrate.trapezoid(np.where(fin, g, 0.0), r))
    sum_eps = math.fsum(math.sqrt(l.eps) for l in system.layers)
    int_W = float(integrate.trapezoid(vals_w, r))
    norm_p = wt(np.abs(p))
    norm_A2 = wt(A**2)
    local_total = math.fsum(local_sq.values())
    area = sphere_area(d)
    certs = {
        "p_l1_bound": {"value": norm_p, "bound": 42.0 * sum_eps, "ok": norm_p <= 42.0 * sum_eps},
        "A_l2_bound": {"value": norm_A2, "bound": 2.0 * local_total, "ok": norm_A2 <= 2.0 * local_total * (1 + 1e-12)},
        "potential_split": {"value": wt(np.abs(vals_v + vals_w - V1)), "ok": bool(np.isfinite(wt(np.abs(vals_v + vals_w - V1))))},
        "local_A_bound": {"value": 0.5 * local_total, "bound": (area + 500.0) * sum_eps + int_W,
                          "ok": 0.5 * local_total <= (area + 500.0) * sum_eps + int_W},
        "w_tilde_plus_A2": {"value": wt(np.abs(W_tilde) + A**2), "ok": bool(np.isfinite(wt(np.abs(W_tilde) + A**2)))},
    }
    final = np.abs(W_tilde + div_A + A**2 - vals_v)
    certs["final_identity"] = float(np.nanmax(final[mask])) if mask.any() else 0.0
    norms = {"p": norm_p, "A2": norm_A2, "V_plus_W_minus_V1": certs["potential_split"]["value"],
             "W_tilde": wt(np.abs(W_tilde)), "sum_sqrt_eps": sum_eps}
    ric = max(support_residual.values())
    certs["levels"] = [{"set": f"{k[0]} {k[1]}", "level": levels[k],
                        "eps": system.layers[k[1]].eps if k[0] == "layer" else 0.0} for k in levels]
    return AssembledDecomposition(r, A, p, V1, W_tilde, div_A, ident, ric, norms, certs)


# relative level shifts tried when the layer level is its own Dirichlet bottom
LEVEL_SHIFTS = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


def _level_decomposition(q, interval, g2, d, h, label, core=None):
    """Riccati decomposition at the smallest shifted level that is resolved on ``core``.

    The layer level is a node-sampled bottom, which can sit slightly above
    the bottom of the ODE problem (jumps of ``Q`` off the grid) or equal the
    bottom of the layer itself, where the positive solution degenerates to
    the ground state.  The base level is raised to a finer Dirichlet bottom
    and then shifted by a relative ``delta <= 1e-2``; the Riccati residual is
    judged only where the partition function is supported.
    """
    base = max(g2, -dirichlet_bottom(q, interval, d, h / 4))
    last = None
    for delta in LEVEL_SHIFTS:
        level = base * (1 + delta)
        try:
            dec = decompose(q, interval, math.sqrt(level), d, h, check=False)
        except RiccatiError as exc:
            last = exc
            continue
        res = dec.residual_profile
        if core is not None:
            res = np.where((dec.r >= core[0]) & (dec.r <= core[1]), res, np.nan)
        worst = float(np.nanmax(np.abs(res))) if np.isfinite(res).any() else 0.0
        if worst <= 1e-3 * max(1.0, level):
            return dec, level, worst
        last = RiccatiError(f"unresolved (residual {worst:.3g} on the partition support)")
    raise PartitionError(f"dependency: no Riccati decomposition for {label}: {last}")


def _sum_profile(v, w):
    if w is None:
        return v
    if isinstance(v, PotentialProfile) and isinstance(w, PotentialProfile):
        return v.plus(w)
    fv = v.scalar if isinstance(v, PotentialProfile) else v
    fw = w.scalar if isinstance(w, PotentialProfile) else w
    return lambda r: fv(r) + fw(r)


def _jumps(f) -> list[float]:
    if isinstance(f, PotentialProfile):
        return f.discontinuities()
    return []
