"""Piecewise potentials on the half-line r >= 1.

A profile is an ordered list of pieces ``[start, end)`` covering ``[1, R_Q)``.
Each piece carries a polynomial in ``r`` and an optional ``c / r**2`` term,
with scalar or symmetric ``n x n`` matrix coefficients.  Coefficients are kept
as :class:`decimal.Decimal` so that JSON files round-trip bit-exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_CHANNELS = 8
KINDS = ("const", "poly", "centrifugal")
INF = Decimal("Infinity")


class ProfileError(ValueError):
    """Raised for malformed potential profiles."""


class HypothesisViolation(ValueError):
    """Raised when ``Q(r) e0 != 0`` somewhere on ``r <= 2``."""


def _dec(x) -> Decimal:
    if isinstance(x, Decimal):
        return x
    if isinstance(x, float):
        if math.isinf(x):
            return INF if x > 0 else -INF
        return Decimal(repr(x))
    if isinstance(x, (int, str)):
        return Decimal(x)
    raise ProfileError(f"cannot interpret {x!r} as a decimal number")


def _dec_str(x: Decimal) -> str:
    if x.is_infinite():
        return "inf" if x > 0 else "-inf"
    return str(x)


def _coef(value, n: int):
    """Normalize one coefficient to a tuple-of-tuples of Decimals (n x n)."""
    if n == 1 and not isinstance(value, (list, tuple)):
        return ((_dec(value),),)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    rows = tuple(tuple(_dec(v) for v in row) for row in value)
    if len(rows) != n or any(len(row) != n for row in rows):
        raise ProfileError(f"coefficient is not a {n}x{n} matrix: {value!r}")
    return rows


def _coef_json(c, n: int):
    if n == 1:
        return _dec_str(c[0][0])
    return [[_dec_str(v) for v in row] for row in c]


def _coef_array(c) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in c])


def centrifugal_coefficient(d: int) -> Decimal:
    """Coefficient ``c`` of ``c / r**2`` in the radial reduction of ``-Laplace`` in ``R^d``."""
    return Decimal((d - 1) * (d - 3)) / Decimal(4)


@dataclass(frozen=True)
class Piece:
    """One expression ``sum_k poly[k] r**k + inv2 / r**2`` on ``[start, end)``."""

    start: Decimal
    end: Decimal
    kind: str
    poly: tuple = ()
    inv2: tuple | None = None

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.start), float(self.end)

    def evaluate(self, r: np.ndarray, n: int) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape + (n, n))
        for k, c in enumerate(self.poly):
            out += np.multiply.outer(r**k, _coef_array(c))
        if self.inv2 is not None:
            out += np.multiply.outer(1.0 / r**2, _coef_array(self.inv2))
        return out

    def antiderivative_00(self, a: float, b: float) -> float:
        """Exact integral of the (0, 0) entry over ``[a, b]``."""
        total = 0.0
        for k, c in enumerate(self.poly):
            total += float(c[0][0]) * (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        if self.inv2 is not None:
            total += float(self.inv2[0][0]) * (1.0 / a - 1.0 / b)
        return total

    def is_zero(self) -> bool:
        coefs = list(self.poly) + ([self.inv2] if self.inv2 is not None else [])
        return all(v == 0 for c in coefs for row in c for v in row)

    def column0_zero(self) -> bool:
        coefs = list(self.poly) + ([self.inv2] if self.inv2 is not None else [])
        return all(row[0] == 0 for c in coefs for row in c)

    def scaled(self, t: Decimal) -> "Piece":
        poly = tuple(tuple(tuple(v * t for v in row) for row in c) for c in self.poly)
        inv2 = None if self.inv2 is None else tuple(tuple(v * t for v in row) for row in self.inv2)
        return Piece(self.start, self.end, self.kind, poly, inv2)

    def to_json(self, n: int) -> dict:
        doc = {"from": _dec_str(self.start), "to": _dec_str(self.end), "kind": self.kind}
        if self.kind == "const":
            doc["coeffs"] = [_coef_json(self.poly[0], n)]
        elif self.kind == "poly":
            doc["coeffs"] = [_coef_json(c, n) for c in self.poly]
            if self.inv2 is not None:
                doc["centrifugal"] = _coef_json(self.inv2, n)
        else:
            doc["coeffs"] = [_coef_json(self.inv2, n)]
        return doc


def make_piece(start, end, kind: str, coeffs: Sequence, n: int = 1, centrifugal=None) -> Piece:
    """Build a piece from user-level coefficients (numbers, strings or matrices)."""
    if kind not in KINDS:
        raise ProfileError(f"unknown piece kind {kind!r}; expected one of {KINDS}")
    cs = tuple(_coef(c, n) for c in coeffs)
    if kind == "const":
        if len(cs) != 1:
            raise ProfileError("a const piece takes exactly one coefficient")
        return Piece(_dec(start), _dec(end), kind, cs, None)
    if kind == "poly":
        if not cs:
            raise ProfileError("a poly piece needs at least one coefficient")
        inv2 = None if centrifugal is None else _coef(centrifugal, n)
        return Piece(_dec(start), _dec(end), kind, cs, inv2)
    if len(cs) != 1:
        raise ProfileError("a centrifugal piece takes exactly one coefficient")
    return Piece(_dec(start), _dec(end), kind, (), cs[0])


@dataclass(frozen=True)
class PotentialProfile:
    """Piecewise potential ``Q(r)`` on ``[1, support_end)``; zero beyond."""

    pieces: tuple[Piece, ...]
    channel_dim: int = 1
    support_end: Decimal = field(default=Decimal(1))

    def __post_init__(self):
        n = self.channel_dim
        if not 1 <= n <= MAX_CHANNELS:
            raise ProfileError(f"channel_dim must be in 1..{MAX_CHANNELS}, got {n}")
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "support_end", _dec(self.support_end))
        pos = Decimal(1)
        for p in self.pieces:
            if p.start != pos:
                what = "overlap" if p.start < pos else "gap"
                raise ProfileError(
                    f"{what} at piece [{_dec_str(p.start)}, {_dec_str(p.end)}): expected start {_dec_str(pos)}"
                )
            if not p.end > p.start:
                raise ProfileError(f"empty piece [{_dec_str(p.start)}, {_dec_str(p.end)})")
            for c in list(p.poly) + ([p.inv2] if p.inv2 is not None else []):
                if len(c) != n:
                    raise ProfileError(f"piece [{_dec_str(p.start)}, {_dec_str(p.end)}) has wrong channel size")
                a = _coef_array(c)
                if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
                    raise ProfileError(
                        f"piece [{_dec_str(p.start)}, {_dec_str(p.end)}) has a non-symmetric coefficient"
                    )
            pos = p.end
        if self.pieces and pos != self.support_end:
            raise ProfileError(
                f"pieces end at {_dec_str(pos)} but support_end is {_dec_str(self.support_end)}"
            )
        if not self.pieces and self.support_end != 1:
            raise ProfileError("empty profile must have support_end 1")
        if self.support_end.is_infinite():
            last = self.pieces[-1]
            if last.poly and any(v != 0 for c in last.poly for row in c for v in row):
                raise ProfileError("only a centrifugal tail may extend to infinity")

    # construction helpers -------------------------------------------------
    @classmethod
    def zero(cls, n: int = 1) -> "PotentialProfile":
        return cls((), n, Decimal(1))

    @classmethod
    def from_pieces(cls, pieces: Iterable[Piece], n: int = 1) -> "PotentialProfile":
        pieces = tuple(pieces)
        end = pieces[-1].end if pieces else Decimal(1)
        return cls(pieces, n, end)

    @classmethod
    def step(cls, segments: Sequence[tuple], n: int = 1) -> "PotentialProfile":
        """Piecewise-constant profile from ``(start, end, value)`` triples.

        Gaps before and between segments are filled with zero pieces.
        """
        zero = 0 if n == 1 else [[0] * n for _ in range(n)]
        pieces = []
        pos = Decimal(1)
        for start, end, value in sorted(segments, key=lambda s: _dec(s[0])):
            start, end = _dec(start), _dec(end)
            if start > pos:
                pieces.append(make_piece(pos, start, "const", [zero], n))
            pieces.append(make_piece(start, end, "const", [value], n))
            pos = end
        return cls.from_pieces(pieces, n)

    @classmethod
    def square_well(cls, depth, a, b) -> "PotentialProfile":
        return cls.step([(a, b, -_dec(depth))])

    @classmethod
    def bump(cls, a, b, height) -> "PotentialProfile":
        """C^1 bump ``height * 16 (r-a)^2 (b-r)^2 / (b-a)^4`` on ``[a, b]`` (peak value ``height``)."""
        a, b, height = _dec(a), _dec(b), _dec(height)
        s = Decimal(16) * height / (b - a) ** 4
        # (r-a)^2 (b-r)^2 = (r^2 - (a+b) r + ab)^2
        p, q = -(a + b), a * b
        coeffs = [q * q, 2 * p * q, p * p + 2 * q, 2 * p, Decimal(1)]
        pieces = []
        if a > 1:
            pieces.append(make_piece(1, a, "const", [0]))
        pieces.append(make_piece(a, b, "poly", [s * c for c in coeffs]))
        return cls.from_pieces(pieces)

    # evaluation -------------------------------------------------------------
    @property
    def is_compact(self) -> bool:
        return not self.support_end.is_infinite()

    @property
    def breakpoints(self) -> list[float]:
        pts = [float(p.start) for p in self.pieces] + [float(self.support_end)]
        return sorted({x for x in pts if math.isfinite(x) and x > 1})

    def _limits(self, x: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.channel_dim
        left = right = np.zeros((n, n))
        for p in self.pieces:
            s, e = p.interval
            if s < x <= e:
                left = p.evaluate(np.array([x]), n)[0]
            if s <= x < e:
                right = p.evaluate(np.array([x]), n)[0]
        return left, right

    def discontinuities(self, tol: float = 1e-12) -> list[float]:
        """Breakpoints where the one-sided limits differ."""
        out = []
        for x in self.breakpoints:
            left, right = self._limits(x)
            if np.max(np.abs(left - right)) > tol:
                out.append(x)
        return out

    def evaluate(self, r) -> np.ndarray:
        """Values ``Q(r)`` with shape ``r.shape + (n, n)``.

        At a breakpoint the average of the two one-sided limits is returned,
        which keeps finite-difference discretizations second order.
        """
        r = np.asarray(r, dtype=float)
        n = self.channel_dim
        out = np.zeros(r.shape + (n, n))
        for p in self.pieces:
            s, e = p.interval
            mask = (r > s) & (r < e)
            if np.any(mask):
                out[mask] = p.evaluate(r[mask], n)
            for edge in (s, e):
                if math.isfinite(edge):
                    hit = r == edge
                    if np.any(hit) and edge >= 1:
                        out[hit] += 0.5 * p.evaluate(r[hit], n)
        # r = 1 has only a right limit.
        first = r == 1.0
        if np.any(first) and self.pieces:
            out[first] = self.pieces[0].evaluate(r[first], n)
        return out

    def scalar(self, r) -> np.ndarray:
        if self.channel_dim != 1:
            raise ProfileError("scalar() requires channel_dim == 1")
        return self.evaluate(r)[..., 0, 0]

    def __call__(self, r):
        return self.scalar(r) if self.channel_dim == 1 else self.evaluate(r)

    # derived quantities -------------------------------------------------------
    def integral_00(self, a: float, b: float = math.inf) -> float:
        """Exact ``int_a^b (Q(r) e0, e0) dr``."""
        total = 0.0
        for p in self.pieces:
            s, e = p.interval
            lo, hi = max(a, s), min(b, e)
            if hi > lo:
                if math.isinf(hi):
                    if p.poly and not all(v == 0 for c in p.poly for row in c for v in row):
                        raise ProfileError("divergent integral of a polynomial tail")
                    total += float(p.inv2[0][0]) / lo if p.inv2 is not None else 0.0
                else:
                    total += p.antiderivative_00(lo, hi)
        return total

    def _extreme_eigs(self, sign: float) -> float:
        """``max_r sign * lambda_extreme(Q(r))`` where extreme is min for sign=-1."""
        best = 0.0
        n = self.channel_dim
        for p in self.pieces:
            s, e = p.interval
            e_fin = e if math.isfinite(e) else max(s, 1.0) * 1e6
            if n == 1 and p.inv2 is None:
                coeffs = [float(c[0][0]) for c in p.poly]
                cand = [s, e_fin]
                if len(coeffs) > 2:
                    der = np.polynomial.polynomial.polyder(coeffs)
                    for root in np.polynomial.polynomial.polyroots(der):
                        if abs(root.imag) < 1e-12 and s < root.real < e_fin:
                            cand.append(root.real)
                vals = np.polynomial.polynomial.polyval(np.array(cand), coeffs)
                best = max(best, float(np.max(sign * vals)))
                continue
            rs = np.linspace(s, e_fin, 2001)
            if not math.isfinite(e):
                rs = s + np.geomspace(1e-9, e_fin - s, 2001)
            eig = np.linalg.eigvalsh(p.evaluate(rs, n))
            vals = sign * (eig[:, -1] if sign > 0 else eig[:, 0])
            i = int(np.argmax(vals))
            best = max(best, float(vals[i]))
            lo, hi = rs[max(i - 1, 0)], rs[min(i + 1, len(rs) - 1)]
            if hi > lo:
                from scipy.optimize import minimize_scalar

                def f(x):
                    w = np.linalg.eigvalsh(p.evaluate(np.array([x]), n)[0])
                    return -sign * (w[-1] if sign > 0 else w[0])

                res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
                best = max(best, float(-res.fun))
        return best

    def negative_part_sup(self) -> float:
        """``||Q_-||_inf`` with ``Q_- = (|Q| - Q) / 2``: largest eigenvalue of ``-Q`` clipped at 0."""
        return self._extreme_eigs(-1.0)

    def sup_norm(self) -> float:
        """``||Q||_inf`` (operator norm, sup over r)."""
        return max(self._extreme_eigs(1.0), self._extreme_eigs(-1.0))

    def check_e0_hypothesis(self, upto: float = 2.0) -> None:
        """Raise :class:`HypothesisViolation` unless ``Q(r) e0 = 0`` for ``r <= upto``."""
        for p in self.pieces:
            s, e = p.interval
            if s < upto and not p.column0_zero():
                raise HypothesisViolation(
                    f"hypothesis violation: Q(r) e0 != 0 on [{s:g}, {min(e, upto):g}) (required for r <= {upto:g})"
                )

    # algebra ------------------------------------------------------------------
    def scaled(self, t) -> "PotentialProfile":
        t = _dec(t)
        return PotentialProfile(tuple(p.scaled(t) for p in self.pieces), self.channel_dim, self.support_end)

    def plus(self, other: "PotentialProfile") -> "PotentialProfile":
        """Pointwise sum; the result is split at the union of breakpoints."""
        if other.channel_dim != self.channel_dim:
            raise ProfileError("channel dimensions differ")
        n = self.channel_dim
        edges = sorted({Decimal(1), self.support_end, other.support_end}
                       | {p.start for p in self.pieces} | {p.start for p in other.pieces})
        pieces = []
        for s, e in zip(edges[:-1], edges[1:]):
            a = _piece_at(self, s)
            b = _piece_at(other, s)
            poly = _add_poly(a.poly if a else (), b.poly if b else (), n)
            inv2 = _add_coef(a.inv2 if a else None, b.inv2 if b else None, n)
            if inv2 is not None and not poly:
                pieces.append(Piece(s, e, "centrifugal", (), inv2))
            elif inv2 is None and len(poly) == 1:
                pieces.append(Piece(s, e, "const", poly, None))
            else:
                if not poly:
                    poly = (_coef(0 if n == 1 else [[0] * n] * n, n),)
                pieces.append(Piece(s, e, "poly", poly, inv2))
        return PotentialProfile(tuple(pieces), n, edges[-1])

    def truncated(self, R) -> "PotentialProfile":
        """``chi_[1,R] Q``: the profile cut off at radius ``R``."""
        R = _dec(R)
        pieces = []
        for p in self.pieces:
            if p.start >= R:
                break
            pieces.append(Piece(p.start, min(p.end, R), p.kind, p.poly, p.inv2))
        return PotentialProfile.from_pieces(pieces, self.channel_dim)

    # JSON --------------------------------------------------------------------
    def to_json(self) -> dict:
        n = self.channel_dim
        return {
            "channel_dim": n,
            "pieces": [p.to_json(n) for p in self.pieces],
            "support_end": _dec_str(self.support_end),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PotentialProfile":
        try:
            n = int(doc.get("channel_dim", 1))
            pieces = []
            for item in doc["pieces"]:
                kind = item["kind"]
                start, end = _parse_dec(item["from"]), _parse_dec(item["to"])
                pieces.append(make_piece(start, end, kind, item["coeffs"], n, item.get("centrifugal")))
            support = _parse_dec(doc.get("support_end", pieces[-1].end if pieces else 1))
        except (KeyError, TypeError) as exc:
            raise ProfileError(f"malformed potential document: {exc}") from exc
        return cls(tuple(pieces), n, support)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "PotentialProfile":
        return cls.from_json(json.loads(text, parse_float=Decimal, parse_int=Decimal))

    @classmethod
    def load(cls, path) -> "PotentialProfile":
        return cls.loads(Path(path).read_text())


def _parse_dec(x) -> Decimal:
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity", "+inf"):
        return INF
    return _dec(x)


def _piece_at(profile: PotentialProfile, x: Decimal) -> Piece | None:
    for p in profile.pieces:
        if p.start <= x < p.end:
            return p
    return None


def _add_coef(a, b, n):
    if a is None:
        return b
    if b is None:
        return a
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def _add_poly(a: tuple, b: tuple, n: int) -> tuple:
    m = max(len(a), len(b))
    out = []
    for k in range(m):
        out.append(_add_coef(a[k] if k < len(a) else None, b[k] if k < len(b) else None, n))
    return tuple(out)
