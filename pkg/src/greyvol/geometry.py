"""Closed-form geometric primitives shared across the package.

Unit-ball volumes, sphere surface areas, disk/ball overlap volumes and
vectorized convex polygon clipping.  Everything here is exact up to floating
point; numerical quadrature lives elsewhere.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "unit_ball_volume",
    "sphere_surface_area",
    "disk_overlap_area",
    "ball_overlap_volume",
    "clip_convex_polygons",
    "polygon_areas",
]


def unit_ball_volume(m: int) -> float:
    """Volume kappa_m of the unit ball in R^m (kappa_0 = 1)."""
    if m < 0:
        raise ValueError("dimension must be >= 0")
    return math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)


def sphere_surface_area(d: int, radius: float = 1.0) -> float:
    """Surface measure of the sphere bounding the d-ball of given radius."""
    return d * unit_ball_volume(d) * radius ** (d - 1)


def disk_overlap_area(R: float, r: float, e) -> np.ndarray:
    """Area of the intersection of two disks with radii R, r at center distance e.

    Vectorized in ``e``.  Standard lens formula with the containment and
    disjoint cases handled explicitly; acos arguments are clamped so grazing
    configurations cannot produce NaNs.
    """
    e = np.asarray(e, dtype=float)
    small = min(R, r)
    lens_mask = (e > abs(R - r)) & (e < R + r)
    out = np.where(e <= abs(R - r), math.pi * small * small, 0.0)
    if np.any(lens_mask):
        el = np.where(lens_mask, e, 1.0)
        c1 = np.clip((el * el + r * r - R * R) / (2.0 * el * r), -1.0, 1.0)
        c2 = np.clip((el * el + R * R - r * r) / (2.0 * el * R), -1.0, 1.0)
        s = (-el + r + R) * (el + r - R) * (el - r + R) * (el + r + R)
        lens = (
            r * r * np.arccos(c1)
            + R * R * np.arccos(c2)
            - 0.5 * np.sqrt(np.maximum(s, 0.0))
        )
        out = np.where(lens_mask, lens, out)
    return out


def ball_overlap_volume(R: float, r: float, e) -> np.ndarray:
    """Volume of the intersection of two 3-balls with radii R, r at distance e.

    Vectorized in ``e``; http://mathworld.wolfram.com/Sphere-SphereIntersection.html.
    """
    e = np.asarray(e, dtype=float)
    small = min(R, r)
    lens_mask = (e > abs(R - r)) & (e < R + r)
    out = np.where(e <= abs(R - r), 4.0 / 3.0 * math.pi * small**3, 0.0)
    if np.any(lens_mask):
        el = np.where(lens_mask, e, 1.0)
        lens = (
            math.pi
            * (R + r - el) ** 2
            * (el * el + 2.0 * el * r - 3.0 * r * r + 2.0 * el * R + 6.0 * r * R - 3.0 * R * R)
            / (12.0 * el)
        )
        out = np.where(lens_mask, lens, out)
    return out


def clip_convex_polygons(verts: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Clip a batch of convex polygons by the half-plane <p, normal> <= offset.

    Parameters
    ----------
    verts : (N, V, 2) array
        Vertices in consistent (counter-clockwise) order.  Repeated vertices
        are allowed and contribute nothing to the area.
    normal, offset : the half-plane constraint.

    Returns
    -------
    (N, V + 1, 2) array of clipped polygons, padded with repeated vertices.
    Fully clipped polygons degenerate to a single repeated point.
    """
    n_poly, n_vert, _ = verts.shape
    dist = verts @ np.asarray(normal, dtype=float) - offset  # (N, V)
    inside = dist <= 0.0

    nxt = np.roll(np.arange(n_vert), -1)
    d0 = dist
    d1 = dist[:, nxt]
    v0 = verts
    v1 = verts[:, nxt, :]

    # Each edge emits at most two vertices: the start point if inside, and
    # the crossing point if the edge straddles the clip line.
    cross = (d0 <= 0.0) != (d1 <= 0.0)
    denom = np.where(cross, d0 - d1, 1.0)
    t = np.where(cross, d0 / denom, 0.0)[..., None]
    inter = v0 + t * (v1 - v0)

    slots = np.empty((n_poly, 2 * n_vert, 2))
    valid = np.zeros((n_poly, 2 * n_vert), dtype=bool)
    slots[:, 0::2, :] = v0
    valid[:, 0::2] = inside
    slots[:, 1::2, :] = inter
    valid[:, 1::2] = cross

    # Compact by forward-filling invalid slots with the previous emitted
    # vertex (repeats are area-neutral for the shoelace formula).
    idx = np.where(valid, np.arange(2 * n_vert)[None, :], -1)
    idx = np.maximum.accumulate(idx, axis=1)
    first = np.argmax(valid, axis=1)
    empty = ~valid.any(axis=1)
    first = np.where(empty, 0, first)
    idx = np.where(idx < 0, first[:, None], idx)
    out = np.take_along_axis(slots, idx[..., None], axis=1)
    if np.any(empty):
        out[empty] = out[empty][:, :1, :]
    return out[:, : n_vert + 1, :]


def polygon_areas(verts: np.ndarray) -> np.ndarray:
    """Shoelace areas of a batch of (possibly padded) polygons, shape (N, V, 2)."""
    x = verts[..., 0]
    y = verts[..., 1]
    x1 = np.roll(x, -1, axis=-1)
    y1 = np.roll(y, -1, axis=-1)
    return 0.5 * np.abs(np.sum(x * y1 - x1 * y, axis=-1))
