"""Spherical-layer systems under the radial reduction: window search, layer induction, gap filling.

Layers are closed node ranges ``[lo, hi]`` of one global grid ``r_i = 1 + i h``,
so every width is an integer number of cells and history replay is exact.
Lengths such as ``6 eps^{-1/2}`` are rounded up to whole cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate, linalg

from ._sturm import bisect_range
from .eigen import negative_spectrum
from .operator import DiscreteOperator, Grid
from .potential import PotentialProfile, centrifugal_coefficient
from .riccati import integration_by_parts_check

DEFAULT_TOL_EPS = 1e-3
DEFAULT_STEP = 1e-2
LEVEL_RTOL = 1e-9


class LayerError(RuntimeError):
    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = list(history)


# --- node-range eigenproblems ------------------------------------------------------------


def range_bottom(q: np.ndarray, lo: int, hi: int, h: float) -> float:
    """Lowest Dirichlet eigenvalue of ``-d^2/dr^2 + q`` on nodes ``lo..hi`` (ends clamped)."""
    if hi - lo < 2:
        return math.inf
    d = np.ascontiguousarray(2.0 / h**2 + q[lo + 1 : hi])
    off = -1.0 / h**2
    span = 2 * abs(off) + 1.0
    return float(bisect_range(d, off * off, float(d.min()) - span, float(d.max()) + span, 0, 1, 0.0)[0])


def range_ground_state(q: np.ndarray, lo: int, hi: int, h: float):
    """Bottom eigenvalue and its eigenvector on nodes ``lo..hi`` (zero at both ends)."""
    d = 2.0 / h**2 + q[lo + 1 : hi]
    e = np.full(d.size - 1, -1.0 / h**2)
    w, v = linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    psi = np.zeros(hi - lo + 1)
    psi[1:-1] = v[:, 0]
    if psi[np.flatnonzero(np.abs(psi) > 0)[0]] < 0:
        psi = -psi
    return float(w[0]), psi / math.sqrt(h * float(np.sum(psi**2)))


def cells(length: float, h: float) -> int:
    """Whole cells covering ``length`` (rounded up)."""
    return int(math.ceil(length / h - 1e-9))


# --- window search ------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    lo: int
    hi: int
    center: float
    bottom: float
    rayleigh: float
    rd_lhs: float
    rd_rhs: float

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "center": self.center, "bottom": self.bottom,
                "rayleigh": self.rayleigh, "rd_lhs": self.rd_lhs, "rd_rhs": self.rd_rhs}


def window_search(q: np.ndarray, lo: int, hi: int, h: float, gamma: float | None = None) -> Window:
    """A window of ``ceil(6 / (gamma h))`` cells inside ``[lo, hi]`` with bottom ``<= -gamma^2 / 2``.

    ``q`` holds samples on the global nodes.  The ground state ``psi`` of the
    range is computed, ``f(c) = int_{|r - c| < 1/gamma} psi^2`` is maximized on
    a ``1/(10 gamma)`` c-grid (first maximizer), and the support of the
    trapezoid cutoff ``3/2 - |r - c| / (2 L)`` is enlarged to the full width.
    """
    bottom, psi = range_ground_state(q, lo, hi, h)
    if gamma is None:
        if bottom >= 0:
            raise LayerError(f"precondition: range bottom {bottom:.6g} is not negative")
        gamma = math.sqrt(-bottom)
    elif abs(bottom + gamma * gamma) > 1e-8 * max(1.0, gamma * gamma):
        raise LayerError(f"precondition: range bottom {bottom:.12g} differs from -gamma^2 = {-gamma * gamma:.12g}")
    m = cells(6.0 / gamma, h)
    if hi - lo < m:
        raise LayerError(f"precondition: range of {hi - lo} cells is shorter than 6/gamma ({m} cells)")
    r = h * np.arange(hi - lo + 1)  # offsets from r_lo
    L = 1.0 / gamma
    cum = integrate.cumulative_trapezoid(psi**2, r, initial=0.0)
    cs = np.arange(0.0, r[-1] + 1e-12, 0.1 / gamma)
    f = np.interp(np.minimum(cs + L, r[-1]), r, cum) - np.interp(np.maximum(cs - L, 0.0), r, cum)
    c = float(cs[int(np.argmax(f))])
    phi = np.clip(1.5 - np.abs(r - c) / (2 * L), 0.0, 1.0)
    start = int(math.floor((c - 3 * L) / h + 1e-9))
    wlo = min(max(start, 0), hi - lo - m)
    # diagnostics of the cutoff construction
    dphi = np.diff(phi) / h
    rd_lhs = float(h * np.sum(dphi**2 * 0.5 * (psi[:-1] ** 2 + psi[1:] ** 2)))
    rd_rhs = float(0.5 * gamma * gamma * h * np.sum((phi * psi) ** 2))
    ibp = integration_by_parts_check(phi, psi, q[lo : hi + 1], bottom, h)
    norm = h * float(np.sum((phi * psi) ** 2))
    rayleigh = ibp["lhs"] / norm
    wbottom = range_bottom(q, lo + wlo, lo + wlo + m, h)
    if wbottom > -0.5 * gamma * gamma * (1 - 1e-9):
        raise LayerError(
            f"internal: window bottom {wbottom:.6g} above -gamma^2/2 = {-0.5 * gamma * gamma:.6g}; "
            f"cutoff Rayleigh quotient {rayleigh:.6g}"
        )
    return Window(lo + wlo, lo + wlo + m, c + lo * h, wbottom, rayleigh, rd_lhs, rd_rhs)


# --- layer system -------------------------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    lo: int
    hi: int
    eps: float
    window: tuple
    sign: int = 1

    def width(self, h: float) -> float:
        return (self.hi - self.lo) * h


@dataclass(frozen=True)
class Gap:
    lo: int
    hi: int
    left: int
    right: int | None
    bottom_plus: float = math.nan
    bottom_minus: float = math.nan

    @property
    def bounded(self) -> bool:
        return self.right is not None


@dataclass(frozen=True)
class LayerSystem:
    h: float
    n_nodes: int  # index of the last node (r = R_ext)
    tol_eps: float
    layers: tuple
    gaps: tuple = ()
    history: tuple = ()
    eigenvalues: dict = field(default_factory=dict)
    filled: bool = False
    d: int = 3

    @property
    def extent(self) -> float:
        return 1.0 + self.n_nodes * self.h

    def r(self, i) -> float:
        return 1.0 + i * self.h

    def sum_sqrt_eps(self, start: int = 1) -> float:
        return math.fsum(math.sqrt(l.eps) for l in self.layers[start:])

    def eigen_bound(self) -> float:
        """``sqrt 2 * sum (sqrt|lambda^+| + sqrt|lambda^-|)``."""
        s = math.fsum(math.sqrt(-x) for x in self.eigenvalues.get("plus", ()))
        s += math.fsum(math.sqrt(-x) for x in self.eigenvalues.get("minus", ()))
        return math.sqrt(2.0) * s

    def to_json(self) -> dict:
        h = self.h
        return {
            "grid": {"h": h, "R": self.extent, "nodes": self.n_nodes + 1},
            "tol_eps": self.tol_eps,
            "d": self.d,
            "filled": self.filled,
            "layers": [
                {"index": i, "lo": l.lo, "hi": l.hi, "a": self.r(l.lo), "b": self.r(l.hi), "eps": l.eps,
                 "sign": l.sign, "window": [self.r(l.window[0]), self.r(l.window[1])], "width": l.width(h)}
                for i, l in enumerate(self.layers)
            ],
            "gaps": [
                {"lo": g.lo, "hi": g.hi, "alpha": self.r(g.lo), "beta": self.r(g.hi), "left": g.left,
                 "right": g.right, "bounded": g.bounded, "bottom_plus": g.bottom_plus, "bottom_minus": g.bottom_minus}
                for g in self.gaps
            ],
            "sum_sqrt_eps": self.sum_sqrt_eps(),
            "eigen_bound": self.eigen_bound(),
            "eigenvalues": {k: list(v) for k, v in self.eigenvalues.items()},
            "history": list(self.history),
        }


def _overlap(a: Layer | Gap, b: Layer | Gap) -> int | None:
    """Cells shared by two closed node ranges, or ``None`` if disjoint."""
    lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
    return hi - lo if hi >= lo else None


def _complement(layers, n_nodes: int) -> list[tuple[int, int]]:
    spans = sorted((l.lo, l.hi) for l in layers)
    out, pos = [], 0
    for lo, hi in spans:
        if lo > pos:
            out.append((pos, lo))
        pos = max(pos, hi)
    if pos < n_nodes:
        out.append((pos, n_nodes))
    return out


# --- invariants ---------------------------------------------------------------------------


def structural_invariants(system: LayerSystem) -> dict:
    """Checks that need no eigensolve; each entry is ``(ok, detail)``."""
    h, layers = system.h, system.layers
    out = {}
    eps = [l.eps for l in layers]
    out["eps_nonincreasing"] = (all(b <= a for a, b in zip(eps, eps[1:])), eps)
    bound = 67.0 if system.filled else 42.0
    bad = [(i, l.width(h), bound / math.sqrt(l.eps)) for i, l in enumerate(layers)
           if i >= 1 and l.width(h) > bound / math.sqrt(l.eps) * (1 + 1e-12)]
    out["width_bound"] = (not bad, {"bound": bound, "violations": bad})
    bad, neighbors = [], {i: [] for i in range(len(layers))}
    for j in range(len(layers)):
        for n in range(j + 1, len(layers)):
            ov = _overlap(layers[j], layers[n])
            if ov is None:
                continue
            neighbors[j].append(n)
            neighbors[n].append(j)
            need = cells(6.0 / math.sqrt(layers[j].eps), h)
            if ov < need:
                bad.append((j, n, ov * h, need * h))
    out["overlap_width"] = (not bad, bad)
    many = {i: v for i, v in neighbors.items() if len(v) > 2}
    out["at_most_two_neighbors"] = (not many, many)
    out["finite"] = (len(layers) < 10**6, len(layers))
    lhs, rhs = system.sum_sqrt_eps(), system.eigen_bound()
    out["sum_bound"] = (lhs <= rhs * (1 + 1e-12) + 1e-15, {"sum_sqrt_eps": lhs, "bound": rhs})
    if system.filled:
        out.update(_gap_invariants(system))
    return out


def separation_diagnostic(system: LayerSystem) -> dict:
    """Distance part of the separation claim: ``dist(Omega_n, U_{m < j(n)} Omega_m) >= 6 eps_{j(n)}^{-1/2}``.

    Reported only: case 2 and case 4 place a new layer at distance
    ``alpha - L - b_k > 0`` from its left neighbour, which can be shorter.
    """
    h, layers = system.h, system.layers
    neighbors = {i: [j for j in range(len(layers)) if j != i and _overlap(layers[i], layers[j]) is not None]
                 for i in range(len(layers))}
    bad = []
    for n in range(len(layers)):
        earlier = [j for j in neighbors[n] if j < n]
        if not earlier:
            continue
        jn = min(earlier)
        need = 6.0 / math.sqrt(layers[jn].eps)
        for m in range(jn):
            ov = _overlap(layers[m], layers[n])
            dist = 0.0 if ov is not None else h * (max(layers[m].lo, layers[n].lo) - min(layers[m].hi, layers[n].hi))
            if dist < need - h:
                bad.append((n, m, dist, need))
    return {"ok": not bad, "violations": bad}


def _gap_invariants(system: LayerSystem) -> dict:
    h, layers = system.h, system.layers
    out = {}
    bad_two, bad_width, bad_ov = [], [], []
    for g_i, g in enumerate(system.gaps):
        hits = [n for n, l in enumerate(layers) if _overlap(l, g) not in (None,) and _overlap(l, g) > 0]
        if g.bounded and len(hits) != 2:
            bad_two.append((g_i, hits))
        if g.bounded:
            m1 = cells(6.0 / math.sqrt(layers[g.left].eps), h)
            m2 = cells(6.0 / math.sqrt(layers[g.right].eps), h)
            if g.hi - g.lo < m1 + m2:
                bad_width.append((g_i, (g.hi - g.lo) * h, (m1 + m2) * h))
        for n in hits:
            want = cells(6.0 / math.sqrt(layers[n].eps), h)
            got = _overlap(layers[n], g)
            if got != min(want, g.hi - g.lo):
                bad_ov.append((g_i, n, got * h, want * h))
    out["gap_two_layers"] = (not bad_two, bad_two)
    out["gap_width"] = (not bad_width, bad_width)
    out["gap_overlap_exact"] = (not bad_ov, bad_ov)
    covered = np.zeros(system.n_nodes, bool)  # cells
    for item in list(layers) + list(system.gaps):
        covered[item.lo : item.hi] = True
    out["coverage"] = (bool(covered.all()), int(np.count_nonzero(~covered)))
    return out


def spectral_invariants(system: LayerSystem, q_plus: np.ndarray, q_minus: np.ndarray) -> dict:
    """Level checks: ``H_pm >= -eps_n`` on each layer, positivity on gaps and on the leftover set."""
    h = system.h
    bad = []
    for i, l in enumerate(system.layers):
        b = min(range_bottom(q_plus, l.lo, l.hi, h), range_bottom(q_minus, l.lo, l.hi, h))
        if b < -l.eps * (1 + LEVEL_RTOL) - 1e-12:
            bad.append((i, b, -l.eps))
    out = {"layer_levels": (not bad, bad)}
    bad = []
    for g_i, g in enumerate(system.gaps):
        b = min(range_bottom(q_plus, g.lo, g.hi, h), range_bottom(q_minus, g.lo, g.hi, h))
        if b < -system.tol_eps:
            bad.append((g_i, b))
    out["gap_positive"] = (not bad, bad)
    rest = [min(range_bottom(q_plus, lo, hi, h), range_bottom(q_minus, lo, hi, h))
            for lo, hi in _complement(system.layers, system.n_nodes)]
    worst = min(rest, default=math.inf)
    out["complement_level"] = (worst >= -system.tol_eps, worst)
    return out


def all_invariants_hold(report: dict) -> bool:
    return all(ok for ok, _ in report.values())


# --- builder ------------------------------------------------------------------------------


def _channel_samples(v, w, r: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    ev = lambda f: np.zeros_like(r) if f is None else np.asarray(
        f.scalar(r) if isinstance(f, PotentialProfile) else f(r), dtype=float)
    vv, ww = ev(v), ev(w)
    c = float(centrifugal_coefficient(d)) / r**2
    return ww + vv + c, ww - vv + c


class _Builder:
    def __init__(self, q_plus, q_minus, h, n_nodes, tol_eps, trace):
        self.qp, self.qm, self.h, self.N = q_plus, q_minus, h, n_nodes
        self.tol_eps = tol_eps
        self.layers: list[Layer] = []
        self.gaps: list[Gap] = []
        self.history: list[dict] = []
        self.trace = trace

    def log(self, entry: dict):
        self.history.append(entry)
        if self.trace is not None:
            self.trace(entry)

    def add(self, lo, hi, eps, window, sign):
        lo, hi = max(int(lo), 0), min(int(hi), self.N)
        self.layers.append(Layer(lo, hi, eps, (int(window[0]), int(window[1])), sign))
        self.log({"op": "add", "index": len(self.layers) - 1, "lo": lo, "hi": hi, "eps": eps,
                  "window": [int(window[0]), int(window[1])], "sign": sign})

    def set(self, index, lo, hi, why):
        lo, hi = max(int(lo), 0), min(int(hi), self.N)
        self.layers[index] = replace(self.layers[index], lo=lo, hi=hi)
        self.log({"op": "set", "index": index, "lo": lo, "hi": hi, "why": why})

    def bottom(self, lo, hi):
        bp = range_bottom(self.qp, lo, hi, self.h)
        bm = range_bottom(self.qm, lo, hi, self.h)
        return (bp, 1) if bp <= bm else (bm, -1)  # ties prefer H_+

    def snapshot(self) -> LayerSystem:
        return LayerSystem(self.h, self.N, self.tol_eps, tuple(self.layers), tuple(self.gaps), tuple(self.history))


def build_layers(
    v,
    w=None,
    extent: float | None = None,
    tol_eps: float = DEFAULT_TOL_EPS,
    step: float = DEFAULT_STEP,
    d: int = 3,
    trace: Callable | None = None,
    max_iter: int | None = None,
    cap_check: bool = True,
) -> LayerSystem:
    """Inductive layer construction for ``H_pm = -d^2/dr^2 + W +- V (+ centrifugal term)`` on ``[1, R]``.

    Each iteration finds the lowest Dirichlet eigenvalue ``-eps_N`` of
    ``H_pm`` over the components of the uncovered set, stops when
    ``eps_N < tol_eps``, runs the window search and applies exactly one of
    the four cases (case 1 merges two layers and restarts).
    """
    if not tol_eps > 0:
        raise LayerError("tol_eps must be positive")
    support = max(float(v.support_end) if isinstance(v, PotentialProfile) else 1.0,
                  float(w.support_end) if isinstance(w, PotentialProfile) else 1.0)
    R = extent if extent is not None else max(2.0 * support, support + 100.0)
    for _ in range(3):
        grid = Grid(R, step)
        r = grid.nodes
        qp, qm = _channel_samples(v, w, r, d)
        spec_p = negative_spectrum(DiscreteOperator.from_samples(grid, qp))
        spec_m = negative_spectrum(DiscreteOperator.from_samples(grid, qm))
        lowest = min(spec_p.lowest, spec_m.lowest)
        eps0 = max(-lowest, tol_eps)
        need = 18.0 / math.sqrt(eps0)
        if R >= need:
            break
        R = need
    h, N = grid.h, grid.count
    b = _Builder(qp, qm, h, N, tol_eps, trace)
    b.log({"op": "init", "eps0": eps0, "R": R, "h": h, "eigen_count": spec_p.count + spec_m.count})
    hi0 = min(cells(12.0 / math.sqrt(eps0) - 1.0, h), N)
    w0 = min(cells(6.0 / math.sqrt(eps0) - 1.0, h), hi0)
    b.add(0, max(hi0, 1), eps0, (0, max(w0, 1)), 1 if spec_p.lowest <= spec_m.lowest else -1)
    cap = 10 * max(1, spec_p.count + spec_m.count) if max_iter is None else max_iter
    iteration = restarts = 0
    while True:
        comps = _complement(b.layers, N)
        cands = []
        for lo, hi in comps:
            val, sign = b.bottom(lo, hi)
            cands.append((val, 0 if sign == 1 else 1, lo, hi, sign))
        if not cands:
            b.log({"op": "stop", "reason": "covered"})
            break
        val, _, lo, hi, sign = min(cands)
        if -val < tol_eps:
            b.log({"op": "stop", "reason": "level", "eps": max(-val, 0.0)})
            break
        iteration += 1
        if iteration > cap:
            raise LayerError(f"iteration cap {cap} exceeded", b.history)
        eps = -val
        prev = b.layers[-1].eps
        if eps > prev:
            # domain monotonicity makes eps_N <= eps_{N-1}; anything above is rounding
            if eps > prev * (1 + 1e-9):
                raise LayerError(f"level increased: {eps} after {prev}", b.history)
            b.log({"op": "clamp", "eps": eps, "to": prev})
            eps = prev
        gamma = math.sqrt(eps)
        m = cells(6.0 / gamma, h)
        tail_note = None
        if hi == N and cap_check:
            tail_note = _cap_stability(v, w, d, lo, N, h, sign, val)
        if hi - lo <= m:
            alpha, beta = lo, hi
            win = {"short_component": True}
        else:
            qs = b.qp if sign == 1 else b.qm
            wdw = window_search(qs, lo, hi, h, gamma)
            alpha, beta = wdw.lo, wdw.hi
            win = wdw.to_json()
        ks = [i for i, l in enumerate(b.layers) if l.hi <= alpha]
        k = max(ks, key=lambda i: (b.layers[i].hi, -i))
        ls = [i for i, l in enumerate(b.layers) if l.lo >= beta]
        l_idx = min(ls, key=lambda i: (b.layers[i].lo, i)) if ls else None
        Lk = cells(6.0 / math.sqrt(b.layers[k].eps), h)
        bk, ak = b.layers[k].hi, b.layers[k].lo
        entry = {"op": "case", "iteration": iteration, "eps": eps, "sign": sign, "component": [lo, hi],
                 "window": [alpha, beta], "k": k, "l": l_idx, "L": m, "search": win}
        if tail_note is not None:
            entry["tail_cap"] = tail_note
        if l_idx is not None:
            Ll = cells(6.0 / math.sqrt(b.layers[l_idx].eps), h)
            al, bl = b.layers[l_idx].lo, b.layers[l_idx].hi
            if al - bk < 2 * max(Lk, Ll):
                restarts += 1
                b.log({**entry, "case": 1, "restart": restarts})
                if Lk <= Ll:
                    b.set(k, ak, bk + Lk, "case1")
                    b.set(l_idx, bk, bl, "case1")
                else:
                    b.set(l_idx, al - Ll, bl, "case1")
                    b.set(k, ak, al, "case1")
                _assert_structure(b)
                continue
        near_left = alpha - bk <= m
        near_right = l_idx is not None and b.layers[l_idx].lo - beta <= m
        if not near_left and not near_right:
            b.log({**entry, "case": 2})
            b.add(alpha - m, beta + m, eps, (alpha, beta), sign)
        elif near_left and near_right:
            b.log({**entry, "case": 3})
            al, bl = b.layers[l_idx].lo, b.layers[l_idx].hi
            Ll = cells(6.0 / math.sqrt(b.layers[l_idx].eps), h)
            b.add(bk, al, eps, (alpha, beta), sign)
            b.set(k, ak, bk + Lk, "case3")
            b.set(l_idx, al - Ll, bl, "case3")
        elif near_left:
            b.log({**entry, "case": 4, "side": "left"})
            b.add(bk, beta + m, eps, (alpha, beta), sign)
            b.set(k, ak, bk + Lk, "case4")
        else:
            b.log({**entry, "case": 4, "side": "right"})
            al, bl = b.layers[l_idx].lo, b.layers[l_idx].hi
            Ll = cells(6.0 / math.sqrt(b.layers[l_idx].eps), h)
            b.add(alpha - m, al, eps, (alpha, beta), sign)
            b.set(l_idx, al - Ll, bl, "case4")
        _assert_structure(b)
    system = b.snapshot()
    system = replace(system, eigenvalues={"plus": spec_p.eigenvalues, "minus": spec_m.eigenvalues}, d=d)
    return system


def _assert_structure(b: _Builder) -> None:
    """Record the structural invariants after each iteration."""
    rep = structural_invariants(LayerSystem(b.h, b.N, b.tol_eps, tuple(b.layers)))
    failed = sorted(k for k, (ok, _) in rep.items() if not ok and k != "sum_bound")
    b.log({"op": "check", "failed": failed})


def _cap_stability(v, w, d, lo, N, h, sign, val) -> dict:
    """Bottom on the tail component with the Dirichlet cap moved twice as far out."""
    n2 = 2 * N - lo
    r = 1.0 + h * np.arange(lo, n2 + 1)
    qp, qm = _channel_samples(v, w, r, d)
    q = qp if sign == 1 else qm
    val2 = range_bottom(q, 0, q.size - 1, h)
    return {"bottom": val, "bottom_doubled": val2, "change": val2 - val}


# --- gap filling --------------------------------------------------------------------------


def fill_gaps(system: LayerSystem, q_plus: np.ndarray | None = None, q_minus: np.ndarray | None = None,
              trace: Callable | None = None) -> LayerSystem:
    """Close the complement: short gaps are absorbed, long ones become ``Lambda`` layers.

    A short gap goes to the neighbour with the larger ``eps^{-1/2}`` while the
    other neighbour is extended by ``6 eps^{-1/2}`` (ties: the left neighbour
    extends).  A long gap is kept and each neighbour ``n_j`` is extended into
    it by exactly ``6 eps_{n_j}^{-1/2}``.  The tail beyond the last layer is
    kept as an unbounded gap.
    """
    if system.filled:
        return system
    h, N = system.h, system.n_nodes
    b = _Builder(q_plus, q_minus, h, N, system.tol_eps, trace)
    b.layers = list(system.layers)
    b.history = list(system.history)
    gaps = _complement(system.layers, N)
    ends = {l.hi: i for i, l in enumerate(system.layers)}
    starts = {l.lo: i for i, l in enumerate(system.layers)}
    for lo, hi in gaps:
        left = max((i for i, l in enumerate(system.layers) if l.hi == lo), default=None)
        right = min((i for i, l in enumerate(system.layers) if l.lo == hi), default=None)
        if left is None:
            raise LayerError(f"internal: gap [{lo}, {hi}] has no left neighbour", b.history)
        el = system.layers[left].eps
        ml = cells(6.0 / math.sqrt(el), h)
        L = b.layers[left]
        if right is None:
            if hi - lo <= ml:
                b.log({"op": "fill", "kind": "tail-absorb", "gap": [lo, hi], "left": left})
                b.set(left, L.lo, N, "fill")
            else:
                b.log({"op": "fill", "kind": "tail", "gap": [lo, hi], "left": left})
                b.set(left, L.lo, lo + ml, "fill")
                b.gaps.append(Gap(lo, hi, left, None))
                b.log({"op": "gap", "lo": lo, "hi": hi, "left": left, "right": None})
            continue
        er = system.layers[right].eps
        mr = cells(6.0 / math.sqrt(er), h)
        R_ = b.layers[right]
        if hi - lo < ml + mr:
            if ml <= mr:
                b.log({"op": "fill", "kind": "short", "gap": [lo, hi], "left": left, "right": right, "absorbs": right})
                b.set(right, lo, R_.hi, "fill")
                b.set(left, L.lo, lo + ml, "fill")
            else:
                b.log({"op": "fill", "kind": "short", "gap": [lo, hi], "left": left, "right": right, "absorbs": left})
                b.set(left, L.lo, hi, "fill")
                b.set(right, hi - mr, R_.hi, "fill")
        else:
            b.log({"op": "fill", "kind": "long", "gap": [lo, hi], "left": left, "right": right})
            b.set(left, L.lo, lo + ml, "fill")
            b.set(right, hi - mr, R_.hi, "fill")
            b.gaps.append(Gap(lo, hi, left, right))
            b.log({"op": "gap", "lo": lo, "hi": hi, "left": left, "right": right})
    del ends, starts
    gaps_out = []
    for g in b.gaps:
        if q_plus is not None:
            g = replace(g, bottom_plus=range_bottom(q_plus, g.lo, g.hi, h), bottom_minus=range_bottom(q_minus, g.lo, g.hi, h))
        gaps_out.append(g)
    return replace(system, layers=tuple(b.layers), gaps=tuple(gaps_out), history=tuple(b.history), filled=True)


def replay(system: LayerSystem) -> LayerSystem:
    """Rebuild layers and gaps from the mutation log alone."""
    layers: list[Layer] = []
    gaps: list[Gap] = []
    for e in system.history:
        op = e["op"]
        if op == "add":
            layers.append(Layer(e["lo"], e["hi"], e["eps"], tuple(e["window"]), e["sign"]))
        elif op == "set":
            layers[e["index"]] = replace(layers[e["index"]], lo=e["lo"], hi=e["hi"])
        elif op == "gap":
            gaps.append(Gap(e["lo"], e["hi"], e["left"], e["right"]))
    kept = tuple(replace(g, bottom_plus=o.bottom_plus, bottom_minus=o.bottom_minus) for g, o in zip(gaps, system.gaps))
    return replace(system, layers=tuple(layers), gaps=kept)


def channel_samples(system: LayerSystem, v, w=None) -> tuple[np.ndarray, np.ndarray]:
    """``W + V`` and ``W - V`` (plus the centrifugal term) on the system's nodes."""
    r = 1.0 + system.h * np.arange(system.n_nodes + 1)
    return _channel_samples(v, w, r, system.d)


def build_and_fill(v, w=None, **kw) -> tuple[LayerSystem, dict]:
    """Build, fill and run the full invariant suite (structural and spectral)."""
    system = build_layers(v, w, **kw)
    qp, qm = channel_samples(system, v, w)
    before = structural_invariants(system)
    filled = fill_gaps(system, qp, qm)
    report = {"prefill": before, "filled": structural_invariants(filled), "spectral": spectral_invariants(filled, qp, qm)}
    failed_steps = [e for e in filled.history if e["op"] == "check" and e["failed"]]
    report["per_iteration"] = (not failed_steps, failed_steps)
    report["diagnostics"] = {"separation": separation_diagnostic(filled)}
    return filled, report
