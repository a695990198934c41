"""Finite-difference discretization of ``-d^2/dr^2 + Q(r)`` on ``[1, L]``.

Second-order central differences, Dirichlet rows at ``r = 1`` and ``r = L``
removed.  Unknowns are ordered node-major: ``u[i, c]`` for interior node ``i``
and channel ``c``, which makes the matrix banded with half-bandwidth ``n``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .potential import PotentialProfile

DEFAULT_STEP = 1e-3
DEFAULT_LENGTH = 50.0
MIN_CELLS = 4


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``r_i = 1 + i h``, ``i = 0..N``, with ``r_N = L``."""

    r_max: float = DEFAULT_LENGTH
    step: float = DEFAULT_STEP
    r_min: float = 1.0

    def __post_init__(self):
        if self.r_min != 1.0:
            raise GridError("r_min must be exactly 1")
        if not self.step > 0:
            raise GridError(f"step must be positive, got {self.step}")
        if self.count < MIN_CELLS:
            raise GridError(f"grid has {self.count} cells; at least {MIN_CELLS} required")

    @property
    def count(self) -> int:
        return int(round((self.r_max - self.r_min) / self.step))

    @property
    def h(self) -> float:
        """Effective step so that the last node sits exactly on ``r_max``."""
        return (self.r_max - self.r_min) / self.count

    @property
    def nodes(self) -> np.ndarray:
        return self.r_min + self.h * np.arange(self.count + 1)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.r_max, self.step / factor)

    def fingerprint(self) -> dict:
        return {"h": self.h, "L": self.r_max}


def sample_potential(profile: PotentialProfile, grid: Grid) -> np.ndarray:
    """``Q`` at every grid node, shape ``(N + 1, n, n)``; zero past the support."""
    return profile.evaluate(grid.nodes)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Block-tridiagonal matrix of ``-u'' + Q u`` on the interior nodes.

    ``diag[i]`` is the ``n x n`` block ``2/h^2 + Q(r_i)``; neighbouring blocks
    are coupled by ``-1/h^2`` times the identity.
    """

    grid: Grid
    potential: np.ndarray  # (M, n, n) samples on interior nodes
    support_end: float = np.inf
    profile: PotentialProfile | None = field(default=None, repr=False)
    kinetic: float = 1.0  # coefficient in front of -d^2/dr^2

    def __post_init__(self):
        q = np.array(self.potential, dtype=float)
        if q.ndim == 1:
            q = q[:, None, None]
        if q.shape[0] != self.grid.count - 1 or q.shape[1] != q.shape[2]:
            raise GridError(f"potential samples have shape {q.shape}, grid expects {self.grid.count - 1} nodes")
        q.setflags(write=False)
        object.__setattr__(self, "potential", q)

    @classmethod
    def from_samples(cls, grid: Grid, q, support_end: float = np.inf, kinetic: float = 1.0) -> "DiscreteOperator":
        """Operator from node samples on all ``N + 1`` nodes or on interior nodes only."""
        q = np.asarray(q, dtype=float)
        if q.shape[0] == grid.count + 1:
            q = q[1:-1]
        return cls(grid, q, support_end, None, kinetic)

    @property
    def n(self) -> int:
        return self.potential.shape[1]

    @property
    def size(self) -> int:
        return self.potential.shape[0] * self.n

    @property
    def r(self) -> np.ndarray:
        return self.grid.interior

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def off(self) -> float:
        return -self.kinetic / self.h**2

    @property
    def diag_blocks(self) -> np.ndarray:
        eye = np.eye(self.n)
        return 2.0 * self.kinetic / self.h**2 * eye + self.potential

    def scalar_diagonal(self) -> np.ndarray:
        if self.n != 1:
            raise GridError("scalar_diagonal requires a one-channel operator")
        return 2.0 * self.kinetic / self.h**2 + self.potential[:, 0, 0]

    def banded(self) -> np.ndarray:
        """Upper banded storage (``scipy.linalg.eig_banded`` layout), ``n + 1`` rows."""
        return block_banded(self.diag_blocks, self.off)

    def dense(self) -> np.ndarray:
        n, m = self.n, self.potential.shape[0]
        a = np.zeros((n * m, n * m))
        for i in range(m):
            a[i * n : (i + 1) * n, i * n : (i + 1) * n] = self.diag_blocks[i]
        idx = np.arange(n * (m - 1))
        a[idx, idx + n] = self.off
        a[idx + n, idx] = self.off
        return a

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """Apply the operator to ``u`` of shape ``(M, n)`` (or ``(M,)`` when n = 1)."""
        shaped = u.reshape(self.potential.shape[0], self.n)
        out = np.einsum("ijk,ik->ij", self.diag_blocks, shaped)
        out[1:] += self.off * shaped[:-1]
        out[:-1] += self.off * shaped[1:]
        return out.reshape(u.shape)

    def fingerprint(self) -> dict:
        digest = hashlib.sha256(self.potential.tobytes()).hexdigest()[:16]
        return {**self.grid.fingerprint(), "n": self.n, "kinetic": self.kinetic, "potential_sha": digest}


def block_banded(diag_blocks: np.ndarray, off: float) -> np.ndarray:
    """Upper banded storage of a block-tridiagonal matrix with scalar coupling ``off``."""
    m, n = diag_blocks.shape[:2]
    ab = np.zeros((n + 1, n * m))
    base = n * np.arange(m)
    for c in range(n):
        for c2 in range(c, n):
            # ab[n + i - j, j] = a[i, j] for i <= j
            ab[n + c - c2, base + c2] = diag_blocks[:, c, c2]
    # coupling between (i, c) and (i+1, c) sits on superdiagonal n
    ab[0, n:] = off
    return ab


def assemble_operator(profile: PotentialProfile, grid: Grid) -> DiscreteOperator:
    q = sample_potential(profile, grid)[1:-1]
    support = float(profile.support_end)
    return DiscreteOperator(grid, q, support, profile)
