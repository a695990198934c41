"""Seeded random potential corpora (wells and bumps on the half-line)."""
from __future__ import annotations

from decimal import Decimal

import numpy as np

from .potential import PotentialProfile, make_piece

DEFAULT_SEED = 20240601


def make_rng(seed: int | None = DEFAULT_SEED, *stream: int) -> np.random.Generator:
    """PCG64 generator from a ``SeedSequence``; ``stream`` selects an independent child."""
    ss = np.random.SeedSequence(DEFAULT_SEED if seed is None else seed)
    for s in stream:
        ss = ss.spawn(s + 1)[s]
    return np.random.Generator(np.random.PCG64(ss))


def _q(x: float, digits: int = 4) -> Decimal:
    return Decimal(f"{x:.{digits}f}")


def _bump_pieces(a: Decimal, b: Decimal, height: Decimal):
    s = Decimal(16) * height / (b - a) ** 4
    p, q = -(a + b), a * b
    coeffs = [q * q, 2 * p * q, p * p + 2 * q, 2 * p, Decimal(1)]
    return make_piece(a, b, "poly", [s * c for c in coeffs])


def profile_from_components(components) -> PotentialProfile:
    """Scalar profile from disjoint ``(kind, a, b, value)`` components; zero elsewhere on ``[1, R)``."""
    pieces = []
    pos = Decimal(1)
    for kind, a, b, value in sorted(components, key=lambda c: c[1]):
        a, b, value = _q(a), _q(b), _q(value)
        if a < pos:
            raise ValueError("components overlap")
        if a > pos:
            pieces.append(make_piece(pos, a, "const", [0]))
        if kind == "well":
            pieces.append(make_piece(a, b, "const", [value]))
        elif kind == "bump":
            pieces.append(_bump_pieces(a, b, value))
        else:
            raise ValueError(f"unknown component kind {kind!r}")
        pos = b
    return PotentialProfile.from_pieces(pieces)


def random_scalar_potential(rng: np.random.Generator, lo: float = 2.0, hi: float = 8.0, bound: float = 4.0):
    """One to three disjoint wells/bumps inside ``[lo, hi]`` with ``|Q| <= bound``."""
    m = int(rng.integers(1, 4))
    cuts = np.sort(rng.uniform(lo, hi, size=2 * m))
    comps = []
    for j in range(m):
        a, b = float(cuts[2 * j]), float(cuts[2 * j + 1])
        if b - a < 0.05:
            b = min(a + 0.05, hi)
        kind = "well" if rng.random() < 0.5 else "bump"
        value = float(rng.uniform(-bound, bound))
        if kind == "well" and rng.random() < 0.7:
            value = -abs(value)
        comps.append((kind, a, b, value))
    # enforce disjointness after rounding
    out, last = [], lo
    for kind, a, b, v in comps:
        a = max(a, last)
        if b - a >= 0.05:
            out.append((kind, a, b, v))
            last = float(_q(b))
    return profile_from_components(out or [("well", 3.0, 4.0, -1.0)])


def scalar_corpus(count: int = 50, seed: int | None = DEFAULT_SEED, **kw) -> list[PotentialProfile]:
    rng = make_rng(seed, 0)
    return [random_scalar_potential(rng, **kw) for _ in range(count)]


def bump_corpus(count: int = 10, seed: int | None = DEFAULT_SEED, lo: float = 1.5, hi: float = 6.0, bound: float = 3.0):
    """C^1 bumps (smooth enough for the second-order Riccati residual test)."""
    rng = make_rng(seed, 1)
    out = []
    for _ in range(count):
        m = int(rng.integers(1, 3))
        cuts = np.sort(rng.uniform(lo, hi, size=2 * m))
        comps = []
        last = lo
        for j in range(m):
            a, b = max(float(cuts[2 * j]), last), float(cuts[2 * j + 1])
            if b - a < 0.3:
                continue
            comps.append(("bump", a, b, float(rng.uniform(-bound, bound))))
            last = float(_q(b))
        out.append(profile_from_components(comps or [("bump", 2.0, 3.0, -1.0)]))
    return out


def layer_corpus(count: int = 20, seed: int | None = DEFAULT_SEED) -> list[dict]:
    """Scenarios ``{"v": profile, "w": profile}`` for the layer builder: sparse wells at large radii."""
    rng = make_rng(seed, 2)
    out = []
    for i in range(count):
        m = int(rng.integers(1, 4))
        comps, pos = [], 30.0
        for _ in range(m):
            a = pos + float(rng.uniform(2.0, 40.0))
            w = float(rng.uniform(0.5, 2.0))
            comps.append(("well", a, a + w, -float(rng.uniform(0.3, 2.0))))
            pos = a + w
        v = profile_from_components(comps)
        out.append({"name": f"layer-{i:02d}", "v": v, "w": PotentialProfile.zero()})
    return out
