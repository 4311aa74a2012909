"""Rendering of grey-scale lattice images, thresholding and file I/O.

Images live on a rectangular integer index grid of the (diagonal-basis)
lattice restricted to a half-open window.  Grey values are the blurred
intensities of a phantom; provenance records which intensity path produced
them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import WindowError
from .lattice import Lattice, grid_index_ranges
from .phantom import HalfSpace, Phantom, intensity_evaluator
from .psf import Psf

__all__ = [
    "GreyImage",
    "BinaryImage",
    "default_window",
    "render",
    "threshold",
    "midpoint_binary",
    "quantize",
    "save_image",
    "load_image",
    "export_pgm",
]

_MAGIC = "greyvol-image-v1"


@dataclass
class GreyImage:
    lattice: Lattice
    window: tuple  # (lo, hi) arrays
    index_ranges: tuple  # per-axis half-open integer ranges
    values: np.ndarray  # shape = grid shape, row-major, in [0, 1]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(b - a for a, b in self.index_ranges)
        if tuple(self.values.shape) != shape:
            raise ValueError("value array shape does not match the index grid")

    @property
    def spacing(self) -> float:
        return self.lattice.spacing

    def points(self) -> np.ndarray:
        axes = [np.arange(a, b) for a, b in self.index_ranges]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        diag = np.diag(self.lattice.basis_matrix) * self.lattice.spacing
        return mesh * diag + self.lattice.offset_vector


@dataclass
class BinaryImage:
    lattice: Lattice
    window: tuple
    index_ranges: tuple
    bits: np.ndarray  # boolean grid
    threshold: Optional[float]  # None marks the classical midpoint rule

    def __post_init__(self):
        shape = tuple(b - a for a, b in self.index_ranges)
        if tuple(self.bits.shape) != shape:
            raise ValueError("bit array shape does not match the index grid")

    def black_count(self) -> int:
        return int(np.count_nonzero(self.bits))


def default_window(phantom: Phantom, psf: Psf, a: float, cell_n: int = 2) -> tuple:
    """Window guaranteeing no estimator term is clipped: bbox dilated by
    a*(cell_n + truncation radius) plus one extra spacing."""
    lo, hi = phantom.bounding_box()
    pad = a * (cell_n + psf.truncation_radius()) + a
    return (np.asarray(lo) - pad, np.asarray(hi) + pad)


def _check_window(phantom: Phantom, psf: Psf, a: float, window, cell_n: int) -> None:
    if isinstance(phantom, HalfSpace):
        return
    lo, hi = phantom.bounding_box()
    need = a * (cell_n + psf.truncation_radius())
    wlo, whi = (np.asarray(s, dtype=float) for s in window)
    if np.any(wlo > lo - need + 1e-12 * a) or np.any(whi < hi + need - 1e-12 * a):
        req_lo = (lo - need).tolist()
        req_hi = (hi + need).tolist()
        raise WindowError(
            f"window too small: need at least [{req_lo}, {req_hi}] "
            f"(phantom bounding box dilated by a*(n + truncation radius))"
        )


def render(
    phantom: Phantom,
    psf: Psf,
    a: float,
    c,
    window,
    cell_n: int = 1,
    evaluator=None,
) -> GreyImage:
    """Grey-scale image of the phantom on the offset lattice inside the window.

    ``evaluator`` may pass a precomputed (name, fn) pair from
    :func:`greyvol.phantom.intensity_evaluator` so per-resolution tables are
    built once and shared across offsets.
    """
    _check_window(phantom, psf, a, window, cell_n)
    lat = Lattice(d=phantom.d, spacing=a, offset=tuple(np.asarray(c, dtype=float)))
    ranges = grid_index_ranges(lat, window)
    if evaluator is None:
        evaluator = intensity_evaluator(phantom, psf, a)
    path_name, evaluate = evaluator
    axes = [np.arange(k0, k1) for k0, k1 in ranges]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    diag = np.diag(lat.basis_matrix) * lat.spacing
    pts = mesh * diag + lat.offset_vector
    values = np.clip(np.asarray(evaluate(pts), dtype=float), 0.0, 1.0)
    return GreyImage(
        lattice=lat,
        window=tuple(np.asarray(s, dtype=float) for s in window),
        index_ranges=ranges,
        values=values,
        provenance={
            "phantom": phantom.descriptor(),
            "psf": psf.descriptor(),
            "psf_compact": psf.compact,
            "a": a,
            "intensity_path": path_name,
        },
    )


def threshold(image: GreyImage, beta: float) -> BinaryImage:
    """Black = grey value strictly above beta."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    return BinaryImage(
        lattice=image.lattice,
        window=image.window,
        index_ranges=image.index_ranges,
        bits=image.values > beta,
        threshold=beta,
    )


def midpoint_binary(phantom: Phantom, lattice: Lattice, window) -> BinaryImage:
    """Classical black-and-white image: black where the pixel midpoint is inside."""
    ranges = grid_index_ranges(lattice, window)
    axes = [np.arange(a0, b) for a0, b in ranges]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    diag = np.diag(lattice.basis_matrix) * lattice.spacing
    pts = mesh * diag + lattice.offset_vector
    return BinaryImage(
        lattice=lattice,
        window=tuple(np.asarray(s, dtype=float) for s in window),
        index_ranges=ranges,
        bits=np.asarray(phantom.contains(pts)),
        threshold=None,
    )


def quantize(image: GreyImage, k: int) -> GreyImage:
    """Map grey values to the midpoints of k equal bins (k >= 3)."""
    if k < 3:
        raise ValueError("need at least three grey levels")
    bins = np.minimum((image.values * k).astype(int), k - 1)
    vals = (bins + 0.5) / k
    prov = dict(image.provenance)
    prov["quantized_levels"] = k
    return GreyImage(
        lattice=image.lattice,
        window=image.window,
        index_ranges=image.index_ranges,
        values=vals,
        provenance=prov,
    )


# ---------------------------------------------------------------------------
# file format: JSON header line + raw little-endian float64, row-major


def save_image(image: GreyImage, path) -> None:
    header = {
        "magic": _MAGIC,
        "d": image.lattice.d,
        "spacing": image.lattice.spacing,
        "offset": list(image.lattice.offset_vector),
        "basis": [list(r) for r in image.lattice.basis_matrix],
        "window_lo": list(np.asarray(image.window[0], dtype=float)),
        "window_hi": list(np.asarray(image.window[1], dtype=float)),
        "index_ranges": [list(r) for r in image.index_ranges],
        "shape": list(image.values.shape),
        "provenance": image.provenance,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(image.values, dtype="<f8").tobytes())


def load_image(path) -> GreyImage:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("magic") != _MAGIC:
            raise ValueError("not a greyvol image file")
        raw = fh.read()
    shape = tuple(header["shape"])
    values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    lat = Lattice(
        d=header["d"],
        spacing=header["spacing"],
        basis=tuple(tuple(r) for r in header["basis"]),
        offset=tuple(header["offset"]),
    )
    return GreyImage(
        lattice=lat,
        window=(np.asarray(header["window_lo"]), np.asarray(header["window_hi"])),
        index_ranges=tuple((int(a), int(b)) for a, b in header["index_ranges"]),
        values=values,
        provenance=header["provenance"],
    )


def export_pgm(image: GreyImage, path) -> None:
    """8-bit PGM export of a 2D image for quick visual checks."""
    if image.values.ndim != 2:
        raise ValueError("PGM export requires a 2D image")
    grey = np.round(image.values * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grey.shape[1]} {grey.shape[0]}\n255\n".encode("ascii"))
        fh.write(grey.tobytes())
