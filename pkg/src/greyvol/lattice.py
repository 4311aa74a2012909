"""Observation lattices a*(B Z^d) + c with random offsets and window enumeration.

The basis B is unimodular (|det| = 1) so one lattice point occupies unit
volume before scaling; the acceptance studies use the identity basis, and the
image pipeline additionally requires a diagonal basis so lattice points form
a rectangular index grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["Lattice", "random_offset", "enumerate_points", "grid_index_ranges"]


@dataclass(frozen=True)
class Lattice:
    """Scaled translated lattice a * (basis @ Z^d) + offset."""

    d: int
    spacing: float
    basis: Optional[tuple] = None  # row tuples; identity when None
    offset: Optional[tuple] = None  # point in the fundamental cell a*C_v

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        B = self.basis_matrix
        if abs(abs(np.linalg.det(B)) - 1.0) > 1e-12:
            raise ValueError("basis must be unimodular (|det| = 1 within 1e-12)")
        if self.offset is not None:
            c = np.asarray(self.offset, dtype=float)
            if c.shape != (self.d,):
                raise ValueError("offset dimension mismatch")
            frac = np.linalg.solve(B, c) / self.spacing
            if np.any(frac < -1e-12) or np.any(frac >= 1.0 + 1e-12):
                raise ValueError("offset must lie in the half-open fundamental cell")
            object.__setattr__(self, "offset", tuple(float(v) for v in c))
        if self.basis is not None:
            object.__setattr__(self, "basis", tuple(tuple(float(v) for v in row) for row in B))

    @property
    def basis_matrix(self) -> np.ndarray:
        if self.basis is None:
            return np.eye(self.d)
        return np.asarray(self.basis, dtype=float)

    @property
    def offset_vector(self) -> np.ndarray:
        if self.offset is None:
            return np.zeros(self.d)
        return np.asarray(self.offset, dtype=float)

    @property
    def is_diagonal(self) -> bool:
        B = self.basis_matrix
        return bool(np.allclose(B, np.diag(np.diag(B)), atol=1e-15))

    def with_offset(self, c) -> "Lattice":
        return Lattice(d=self.d, spacing=self.spacing, basis=self.basis, offset=tuple(float(v) for v in c))

    def point(self, k) -> np.ndarray:
        """Lattice point for integer coordinates k."""
        return self.spacing * (self.basis_matrix @ np.asarray(k, dtype=float)) + self.offset_vector


def random_offset(lattice: Lattice, rng: np.random.Generator) -> np.ndarray:
    """Uniform point of the half-open cell a*C_v, deterministic given the stream."""
    u = rng.random(lattice.d)
    return lattice.spacing * (lattice.basis_matrix @ u)


def grid_index_ranges(lattice: Lattice, window) -> tuple:
    """Half-open integer index ranges [(lo_i, hi_i)] of lattice points in an axis box.

    Only available for diagonal bases, where the in-window index set is a
    product of intervals.
    """
    if not lattice.is_diagonal:
        raise ValueError("rectangular index grids require a diagonal basis")
    lo, hi = (np.asarray(side, dtype=float) for side in window)
    if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise ValueError("window must be bounded")
    diag = np.diag(lattice.basis_matrix) * lattice.spacing
    c = lattice.offset_vector
    los, his = [], []
    for i in range(lattice.d):
        step = diag[i]
        if step > 0:
            k_lo = math.ceil((lo[i] - c[i]) / step - 1e-12)
            k_hi = math.ceil((hi[i] - c[i]) / step - 1e-12)
        else:
            k_lo = math.ceil((hi[i] - c[i]) / step + 1e-12)
            k_hi = math.ceil((lo[i] - c[i]) / step + 1e-12)
        los.append(k_lo)
        his.append(max(k_lo, k_hi))
    return tuple((int(a), int(b)) for a, b in zip(los, his))


def enumerate_points(lattice: Lattice, window) -> np.ndarray:
    """All lattice points inside the half-open axis box, lexicographic in k.

    Works for any unimodular basis: candidate integer coordinates are taken
    from the interval hull of the window preimage, then filtered.
    """
    lo, hi = (np.asarray(side, dtype=float) for side in window)
    if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise ValueError("window must be bounded")
    if np.any(hi <= lo):
        return np.empty((0, lattice.d))

    if lattice.is_diagonal:
        ranges = grid_index_ranges(lattice, window)
        axes = [np.arange(a, b) for a, b in ranges]
        if any(len(ax) == 0 for ax in axes):
            return np.empty((0, lattice.d))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lattice.d)
        return mesh * (np.diag(lattice.basis_matrix) * lattice.spacing) + lattice.offset_vector

    B = lattice.basis_matrix * lattice.spacing
    Binv = np.linalg.inv(B)
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    pre = (corners - lattice.offset_vector) @ Binv.T
    k_lo = np.floor(pre.min(axis=0)).astype(int) - 1
    k_hi = np.ceil(pre.max(axis=0)).astype(int) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(k_lo, k_hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lattice.d)
    pts = mesh @ B.T + lattice.offset_vector
    mask = np.all((pts >= lo - 1e-12 * lattice.spacing) & (pts < hi - 1e-12 * lattice.spacing), axis=1)
    return pts[mask]
