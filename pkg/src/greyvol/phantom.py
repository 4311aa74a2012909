"""Geometric test solids with exact references and blurred-intensity evaluation.

A phantom knows its exact intrinsic volumes, membership test, boundary
surface measure and curvature, and how to evaluate the blurred intensity

    theta_a(x) = integral over the solid of rho_a(z - x) dz

for a given PSF at lattice spacing a.  Intensity evaluation is dispatched to
the fastest exact path available for the (phantom, psf) pair; the chosen path
name is reported so renders can log their provenance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import IncompatibilityError
from .geometry import (
    ball_overlap_volume,
    clip_convex_polygons,
    disk_overlap_area,
    polygon_areas,
    sphere_surface_area,
    unit_ball_volume,
)
from .psf import BallIndicator, BoxIndicator, Gaussian, Psf

__all__ = [
    "Phantom",
    "Ball",
    "Box",
    "HalfSpace",
    "SurfaceMeasure",
    "SphereUniform",
    "PolytopeAtoms",
    "CurvatureInfo",
    "contains",
    "intrinsic_volume",
    "intensity",
    "intensity_evaluator",
    "surface_measure",
    "curvature",
    "phantom_from_descriptor",
]


@dataclass(frozen=True)
class CurvatureInfo:
    """Trace of the second fundamental form on the boundary (constant where defined)."""

    trace: float
    defined_everywhere: bool


@dataclass(frozen=True)
class SphereUniform:
    """Uniform surface measure on a sphere; total mass is the surface area."""

    radius: float
    d: int

    @property
    def mass(self) -> float:
        return sphere_surface_area(self.d, self.radius)


@dataclass(frozen=True)
class PolytopeAtoms:
    """Atomic normal measure of a polytope: (outer unit normal, facet area) pairs."""

    atoms: tuple  # of (normal ndarray, area float)

    @property
    def mass(self) -> float:
        return float(sum(a for _, a in self.atoms))


SurfaceMeasure = SphereUniform | PolytopeAtoms


class Phantom:
    d: int

    def contains(self, x) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self) -> tuple:
        """(lo, hi) corner arrays; raises for unbounded phantoms."""
        raise NotImplementedError

    def intrinsic_volume(self, q: int) -> float:
        raise NotImplementedError

    def surface_measure(self) -> SurfaceMeasure:
        raise NotImplementedError

    def curvature(self) -> CurvatureInfo:
        raise NotImplementedError

    @property
    def r_regular(self) -> bool:
        """Whether two-sided touching balls of a common radius exist everywhere."""
        return False

    def descriptor(self) -> dict:
        raise NotImplementedError

    def slice_interval(self, p0: np.ndarray, e: np.ndarray) -> tuple:
        """Parameter interval {s : p0 + s e inside}; (nan, nan) when empty."""
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Phantom):
    center: tuple
    R: float
    d: int = 2

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("radius must be positive")
        c = tuple(float(v) for v in self.center)
        if len(c) != self.d:
            raise ValueError("center dimension mismatch")
        object.__setattr__(self, "center", c)

    @property
    def r_regular(self) -> bool:
        return True

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        diff = x - np.asarray(self.center)
        return np.sum(diff * diff, axis=-1) <= self.R * self.R

    def bounding_box(self):
        c = np.asarray(self.center)
        return c - self.R, c + self.R

    def intrinsic_volume(self, q: int) -> float:
        if not 0 <= q <= self.d:
            raise ValueError("q out of range")
        return (
            math.comb(self.d, q)
            * unit_ball_volume(self.d)
            / unit_ball_volume(self.d - q)
            * self.R**q
        )

    def surface_measure(self):
        return SphereUniform(radius=self.R, d=self.d)

    def curvature(self):
        return CurvatureInfo(trace=(self.d - 1) / self.R, defined_everywhere=True)

    def slice_interval(self, p0, e):
        c = np.asarray(self.center)
        w = np.asarray(p0, dtype=float) - c
        A = float(np.dot(e, e))
        B = 2.0 * float(np.dot(w, e))
        C = float(np.dot(w, w)) - self.R * self.R
        disc = B * B - 4.0 * A * C
        if disc <= 0:
            return (math.nan, math.nan)
        root = math.sqrt(disc)
        return ((-B - root) / (2 * A), (-B + root) / (2 * A))

    def descriptor(self) -> dict:
        return {"variant": "ball", "center": list(self.center), "R": self.R, "d": self.d}


@dataclass(frozen=True)
class Box(Phantom):
    """Axis box with optional rotation: {x : |Q^T (x - center)|_i <= half_widths_i}."""

    center: tuple
    half_widths: tuple
    rotation: Optional[tuple] = None  # row tuples of the rotation matrix Q
    d: int = 0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        hw = tuple(float(v) for v in self.half_widths)
        if len(c) != len(hw):
            raise ValueError("center/half-width dimension mismatch")
        if any(h <= 0 for h in hw):
            raise ValueError("half-widths must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", hw)
        object.__setattr__(self, "d", len(hw))
        if self.rotation is not None:
            Q = np.asarray(self.rotation, dtype=float)
            if Q.shape != (self.d, self.d) or np.max(np.abs(Q @ Q.T - np.eye(self.d))) > 1e-12:
                raise ValueError("rotation must be orthonormal to 1e-12")
            object.__setattr__(self, "rotation", tuple(tuple(row) for row in Q))

    @property
    def Q(self) -> np.ndarray:
        if self.rotation is None:
            return np.eye(self.d)
        return np.asarray(self.rotation, dtype=float)

    @property
    def is_axis_aligned(self) -> bool:
        return self.rotation is None or np.allclose(self.Q, np.eye(self.d), atol=1e-15)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        local = (x - np.asarray(self.center)) @ self.Q
        return np.all(np.abs(local) <= np.asarray(self.half_widths), axis=-1)

    def corners(self) -> np.ndarray:
        hw = np.asarray(self.half_widths)
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * self.d), indexing="ij")).reshape(self.d, -1).T
        return np.asarray(self.center) + (signs * hw) @ self.Q.T

    def bounding_box(self):
        pts = self.corners()
        return pts.min(axis=0), pts.max(axis=0)

    def intrinsic_volume(self, q: int) -> float:
        if not 0 <= q <= self.d:
            raise ValueError("q out of range")
        # elementary symmetric polynomial of the full side lengths
        sides = [2.0 * h for h in self.half_widths]
        if q == 0:
            return 1.0
        total = 0.0
        from itertools import combinations

        for combo in combinations(sides, q):
            total += math.prod(combo)
        return total

    def surface_measure(self):
        atoms = []
        hw = np.asarray(self.half_widths)
        for axis in range(self.d):
            area = math.prod(2.0 * hw[i] for i in range(self.d) if i != axis)
            normal = self.Q[:, axis]
            atoms.append((tuple(normal), area))
            atoms.append((tuple(-normal), area))
        return PolytopeAtoms(atoms=tuple(atoms))

    def curvature(self):
        return CurvatureInfo(trace=0.0, defined_everywhere=False)

    def halfplane_constraints(self):
        """List of (unit normal, offset) with inside = {<x, n> <= m}."""
        out = []
        c = np.asarray(self.center)
        for axis in range(self.d):
            n = self.Q[:, axis]
            out.append((n, float(np.dot(n, c)) + self.half_widths[axis]))
            out.append((-n, -float(np.dot(n, c)) + self.half_widths[axis]))
        return out

    def slice_interval(self, p0, e):
        lo, hi = -math.inf, math.inf
        for n, m in self.halfplane_constraints():
            a = float(np.dot(n, e))
            b = m - float(np.dot(n, np.asarray(p0, dtype=float)))
            if abs(a) < 1e-15:
                if b < 0:
                    return (math.nan, math.nan)
                continue
            s = b / a
            if a > 0:
                hi = min(hi, s)
            else:
                lo = max(lo, s)
        if lo >= hi:
            return (math.nan, math.nan)
        return (lo, hi)

    def descriptor(self) -> dict:
        out = {
            "variant": "box",
            "center": list(self.center),
            "half_widths": list(self.half_widths),
            "d": self.d,
        }
        if self.rotation is not None:
            out["rotation"] = [list(r) for r in self.rotation]
        return out


@dataclass(frozen=True)
class HalfSpace(Phantom):
    """Closed half-space {x : <x, normal> <= offset}."""

    normal: tuple
    offset: float
    d: int = 0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("normal must be a unit vector")
        object.__setattr__(self, "normal", tuple(n))
        object.__setattr__(self, "d", len(n))

    @property
    def r_regular(self) -> bool:
        return True

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return x @ np.asarray(self.normal) <= self.offset

    def bounding_box(self):
        raise IncompatibilityError("half-space phantom is unbounded")

    def intrinsic_volume(self, q: int) -> float:
        raise IncompatibilityError("intrinsic volumes of a half-space are not finite")

    def surface_measure(self):
        raise IncompatibilityError("half-space boundary has infinite surface measure")

    def curvature(self):
        return CurvatureInfo(trace=0.0, defined_everywhere=True)

    def slice_interval(self, p0, e):
        n = np.asarray(self.normal)
        a = float(np.dot(n, e))
        b = self.offset - float(np.dot(n, np.asarray(p0, dtype=float)))
        if abs(a) < 1e-15:
            return (-math.inf, math.inf) if b >= 0 else (math.nan, math.nan)
        s = b / a
        return (-math.inf, s) if a > 0 else (s, math.inf)

    def descriptor(self) -> dict:
        return {"variant": "halfspace", "normal": list(self.normal), "offset": self.offset, "d": self.d}


# ---------------------------------------------------------------------------
# module-level operations


def contains(phantom: Phantom, x):
    return phantom.contains(x)


def intrinsic_volume(phantom: Phantom, q: int) -> float:
    return phantom.intrinsic_volume(q)


def surface_measure(phantom: Phantom) -> SurfaceMeasure:
    return phantom.surface_measure()


def curvature(phantom: Phantom) -> CurvatureInfo:
    return phantom.curvature()


# -- intensity dispatch -------------------------------------------------------


def _ball_radial_table(phantom: Ball, psf: Psf, a: float) -> Callable:
    """Spline of the intensity as a function of center distance, for radial PSFs.

    In PSF units the phantom is a ball of radius RR = R/a; the intensity only
    depends on u = (|x - c| - R)/a which lives in [-D, D].  Nodes are computed
    with adaptive quadrature, giving absolute errors well below 1e-9.
    """
    D = psf.truncation_radius(1e-15)
    RR = phantom.R / a
    us = np.linspace(-D - 1e-9, D + 1e-9, 1601)

    def node(u: float) -> float:
        e = RR + u
        if e <= 1e-12:
            return psf.mass_in_ball(RR)

        if phantom.d == 2:

            def integrand(r):
                if r == 0.0:
                    return 0.0
                cosang = (r * r + e * e - RR * RR) / (2.0 * r * e)
                ang = math.acos(min(1.0, max(-1.0, cosang)))
                return float(psf.radial_density(r)) * 2.0 * ang * r

        else:

            def integrand(r):
                if r == 0.0:
                    return 0.0
                u_star = (r * r + e * e - RR * RR) / (2.0 * r * e)
                u_star = min(1.0, max(-1.0, u_star))
                return float(psf.radial_density(r)) * 2.0 * math.pi * r * r * (1.0 - u_star)

        kink = abs(e - RR)
        pts = [kink] if 0.0 < kink < D else None
        val, _ = integrate.quad(integrand, 0.0, D, points=pts, epsabs=1e-12, epsrel=1e-11, limit=300)
        return val

    vals = np.array([node(float(u)) for u in us])
    spline = CubicSpline(us, np.clip(vals, 0.0, 1.0))
    center = np.asarray(phantom.center)

    def evaluate(points: np.ndarray) -> np.ndarray:
        e = np.linalg.norm(np.asarray(points, dtype=float) - center, axis=-1)
        u = (e - phantom.R) / a
        out = np.empty_like(u)
        low = u <= -D
        high = u >= D
        mid = ~(low | high)
        out[low] = 1.0
        out[high] = 0.0
        out[mid] = np.clip(spline(u[mid]), 0.0, 1.0)
        return out

    return evaluate


def _quad_intensity_point(phantom: Phantom, psf: Psf, a: float, x: np.ndarray) -> float:
    """Nested adaptive quadrature of rho(w) over the slice {x + a w inside}."""
    D = psf.truncation_radius(1e-15)
    x = np.asarray(x, dtype=float)
    d = psf.d
    axes = np.eye(d)

    def inner_1d(fixed: np.ndarray) -> float:
        p0 = x + a * fixed
        e = a * axes[-1]
        lo, hi = phantom.slice_interval(p0, e)
        if not math.isfinite(lo) and not math.isfinite(hi):
            if math.isnan(lo):
                return 0.0
            lo, hi = -D, D
        lo = max(lo, -D)
        hi = min(hi, D)
        if lo >= hi:
            return 0.0

        def f(w_last):
            z = fixed.copy()
            z[-1] = w_last
            return float(psf.density(z))

        val, _ = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
        return val

    if d == 2:

        def outer(w1):
            return inner_1d(np.array([w1, 0.0]))

        val, _ = integrate.quad(outer, -D, D, epsabs=1e-10, epsrel=1e-9, limit=200)
        return min(1.0, max(0.0, val))

    def middle(w1):
        def g(w2):
            return inner_1d(np.array([w1, w2, 0.0]))

        val, _ = integrate.quad(g, -D, D, epsabs=1e-11, epsrel=1e-9, limit=120)
        return val

    val, _ = integrate.quad(middle, -D, D, epsabs=1e-9, epsrel=1e-8, limit=120)
    return min(1.0, max(0.0, val))


def intensity_evaluator(phantom: Phantom, psf: Psf, a: float):
    """Pick the intensity path for a (phantom, psf) pair.

    Returns (path_name, evaluate) where evaluate maps an (..., d) array of
    points to intensities in [0, 1].  The path name is recorded in image
    provenance so error budgets are reproducible.
    """
    if a <= 0:
        raise ValueError("spacing a must be positive")
    if phantom.d != psf.d:
        raise IncompatibilityError("phantom and psf dimensions differ")

    if isinstance(phantom, HalfSpace):
        nvec = np.asarray(phantom.normal)

        def eval_halfspace(points):
            t = (np.asarray(points, dtype=float) @ nvec - phantom.offset) / a
            return np.asarray(psf.profile(t, nvec))

        return "halfspace-profile", eval_halfspace

    if isinstance(phantom, Ball) and isinstance(psf, BallIndicator):
        r = a * psf.R
        center = np.asarray(phantom.center)
        norm = unit_ball_volume(phantom.d) * r**phantom.d

        def eval_lens(points):
            e = np.linalg.norm(np.asarray(points, dtype=float) - center, axis=-1)
            if phantom.d == 2:
                return disk_overlap_area(phantom.R, r, e) / norm
            return ball_overlap_volume(phantom.R, r, e) / norm

        return "ball-lens", eval_lens

    if isinstance(phantom, Ball) and psf.rotation_invariant:
        return "radial-profile-table", _ball_radial_table(phantom, psf, a)

    if isinstance(phantom, Box) and phantom.is_axis_aligned and isinstance(psf, BoxIndicator):
        c = np.asarray(phantom.center)
        hw = np.asarray(phantom.half_widths)
        hp = a * np.asarray(psf.half_widths)

        def eval_separable(points):
            points = np.asarray(points, dtype=float)
            lo = np.maximum(points - hp, c - hw)
            hi = np.minimum(points + hp, c + hw)
            overlap = np.maximum(hi - lo, 0.0) / (2.0 * hp)
            return np.prod(overlap, axis=-1)

        return "box-separable", eval_separable

    if isinstance(phantom, Box) and phantom.is_axis_aligned and isinstance(psf, Gaussian):
        from scipy.special import ndtr as _ndtr

        c = np.asarray(phantom.center)
        hw = np.asarray(phantom.half_widths)
        s = a * psf.sigma

        def eval_gauss_box(points):
            points = np.asarray(points, dtype=float)
            upper = _ndtr((c + hw - points) / s)
            lower = _ndtr((c - hw - points) / s)
            return np.prod(upper - lower, axis=-1)

        return "box-gaussian-separable", eval_gauss_box

    if isinstance(phantom, Box) and phantom.d == 2 and isinstance(psf, BoxIndicator):
        hp = a * np.asarray(psf.half_widths)
        constraints = phantom.halfplane_constraints()
        area_norm = 4.0 * hp[0] * hp[1]
        square = np.array(
            [[-hp[0], -hp[1]], [hp[0], -hp[1]], [hp[0], hp[1]], [-hp[0], hp[1]]]
        )

        def eval_clip(points):
            points = np.asarray(points, dtype=float)
            flat = points.reshape(-1, 2)
            polys = flat[:, None, :] + square[None, :, :]
            for n, m in constraints:
                polys = clip_convex_polygons(polys, n, m)
            vals = polygon_areas(polys) / area_norm
            return vals.reshape(points.shape[:-1])

        return "polygon-clip", eval_clip

    def eval_quad(points):
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, phantom.d)
        vals = np.array([_quad_intensity_point(phantom, psf, a, p) for p in flat])
        return vals.reshape(points.shape[:-1])

    return "nested-quadrature", eval_quad


def intensity(phantom: Phantom, psf: Psf, a: float, x) -> np.ndarray:
    """Blurred intensity theta_a(x); accepts a single point or an array of points."""
    _, evaluate = intensity_evaluator(phantom, psf, a)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    vals = evaluate(x[None, :] if single else x)
    return float(vals[0]) if single else vals


def phantom_from_descriptor(desc: dict) -> Phantom:
    kind = desc.get("variant")
    if kind == "ball":
        return Ball(center=tuple(desc["center"]), R=float(desc["R"]), d=int(desc["d"]))
    if kind == "box":
        rot = desc.get("rotation")
        return Box(
            center=tuple(desc["center"]),
            half_widths=tuple(desc["half_widths"]),
            rotation=tuple(tuple(r) for r in rot) if rot is not None else None,
        )
    if kind == "halfspace":
        return HalfSpace(normal=tuple(desc["normal"]), offset=float(desc["offset"]))
    raise ValueError(f"unknown phantom variant {kind!r}")
