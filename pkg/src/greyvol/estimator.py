"""Local estimators: configuration counts, thresholded and grey-value sums.

A black-and-white estimator is a^q times a weighted count of n x ... x n
cell patterns; the grey-value estimators (single-pixel case) sum a weight
function of the grey values instead.  Factories construct weight functions
whose asymptotic means hit the surface area or the integrated mean curvature
exactly, pulling the required constants from :mod:`greyvol.theory`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import IncompatibilityError, NumericalError
from .imaging import BinaryImage, GreyImage, threshold
from .psf import Psf, is_regular_value, phi
from .weights import (
    WeightFunction,
    Weights,
    antisymmetric_count,
    indicator,
    scaled_linear,
    symmetric_indicator,
)

__all__ = [
    "ConfigurationScheme",
    "count_configurations",
    "bw_estimate",
    "thresholded_estimate",
    "grey_estimate",
    "make_surface_estimator",
    "make_mean_curvature_estimator",
    "bw_surface_weights_2d",
]


@dataclass(frozen=True)
class ConfigurationScheme:
    """Indexing of the 2^(n^d) black/white patterns on an n x ... x n cell.

    Cell point offsets are listed lexicographically; bit b of the pattern
    index l marks offset b as black, so bit 0 is the cell origin, l = 0 is
    all-white and l = 2^(n^d) - 1 all-black.
    """

    d: int
    n: int = 2

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("cell side must be at least 2")
        if self.d not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    @property
    def points_per_cell(self) -> int:
        return self.n**self.d

    @property
    def n_configurations(self) -> int:
        return 1 << self.points_per_cell

    @property
    def offsets(self) -> np.ndarray:
        axes = [np.arange(self.n)] * self.d
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return mesh.reshape(-1, self.d)

    def black_offsets(self, l: int) -> np.ndarray:
        offs = self.offsets
        mask = [(l >> b) & 1 == 1 for b in range(self.points_per_cell)]
        return offs[np.asarray(mask)]

    def white_offsets(self, l: int) -> np.ndarray:
        offs = self.offsets
        mask = [(l >> b) & 1 == 0 for b in range(self.points_per_cell)]
        return offs[np.asarray(mask)]


def count_configurations(image: BinaryImage, scheme: ConfigurationScheme) -> np.ndarray:
    """Occurrence counts N_l over all cells fully inside the image grid."""
    bits = image.bits
    if bits.ndim != scheme.d:
        raise ValueError("image dimension does not match the scheme")
    if any(s < scheme.n for s in bits.shape):
        raise IncompatibilityError(
            "image grid smaller than one configuration cell; enlarge the window "
            f"(need margin >= {scheme.n - 1} spacings)"
        )
    inner = tuple(s - (scheme.n - 1) for s in bits.shape)
    code = np.zeros(inner, dtype=np.int64)
    for b, off in enumerate(scheme.offsets):
        sl = tuple(slice(int(o), int(o) + inner[k]) for k, o in enumerate(off))
        code |= bits[sl].astype(np.int64) << b
    return np.bincount(code.ravel(), minlength=scheme.n_configurations)


def bw_estimate(counts: np.ndarray, weights: Weights, a: float) -> float:
    """a^q * sum over l >= 1 of w_l N_l."""
    w = weights.array
    if len(w) != len(counts):
        raise ValueError("weight vector and counts disagree in length")
    return a**weights.q * float(np.dot(w[1:], counts[1:]))


def thresholded_estimate(image: GreyImage, beta: float, weights: Weights, a: float, scheme=None) -> float:
    """BW estimate applied to the image thresholded at level beta."""
    scheme = scheme or ConfigurationScheme(d=image.lattice.d)
    counts = count_configurations(threshold(image, beta), scheme)
    return bw_estimate(counts, weights, a)


def grey_estimate(image: GreyImage, f: WeightFunction, q: int) -> float:
    """a^q * sum of f over the grey values (single-pixel local estimator)."""
    if not image.provenance.get("psf_compact", True):
        lo, _ = f.support
        if lo <= 0.0 or f.right_limit(0.0) != 0.0:
            raise IncompatibilityError(
                "PSF has non-compact support: the weight function must vanish "
                "in a neighbourhood of grey value 0"
            )
    a = image.spacing
    return a**q * float(np.sum(f(image.values)))


def make_surface_estimator(psf: Psf, beta: float, omega: float):
    """Weight function and scale whose grey estimate with q = d-1 targets V_{d-1}.

    The interval count over (beta, omega] is scaled by 1/(2 (phi(beta) -
    phi(omega))), which makes the estimator asymptotically unbiased for
    rotation-invariant PSFs; omega = 1 - beta gives the symmetric variant
    with the vanishing first-order bias.
    """
    if not psf.rotation_invariant:
        raise IncompatibilityError("surface estimators with this scale need a rotation-invariant PSF")
    if not 0.0 < beta < omega < 1.0:
        raise ValueError("need 0 < beta < omega < 1")
    n = np.zeros(psf.d)
    n[0] = 1.0
    for level in (beta, omega):
        if not is_regular_value(psf, n, level):
            raise IncompatibilityError(f"level {level} is not a regular value of the profile")
    t_beta = phi(psf, n, beta)
    t_omega = phi(psf, n, omega)
    if abs(t_beta - t_omega) < 1e-12:
        raise NumericalError("degenerate interval: phi(beta) = phi(omega)")
    scale = 0.5 / (t_beta - t_omega)
    if abs(omega - (1.0 - beta)) < 1e-12:
        f = symmetric_indicator(beta)
    else:
        f = indicator(beta, omega)
    return f, scale


def make_mean_curvature_estimator(psf: Psf, variant: str = "linear"):
    """Weight function and scale whose grey estimate with q = d-2 targets V_{d-2}.

    variant="linear" uses scale * (x - 1/2) restricted to (beta_0, 1 - beta_0)
    with beta_0 the level maximizing the auxiliary function d2;
    variant="antisymmetric-count" uses the difference of two interval counts
    at the same beta_0 (covered by the jump-sum extension).
    """
    from . import theory

    if not psf.rotation_invariant:
        raise IncompatibilityError("mean-curvature estimators need a rotation-invariant PSF")
    if not psf.compact:
        raise IncompatibilityError("mean-curvature estimators need a compactly supported PSF")
    if not psf.continuous:
        raise IncompatibilityError("mean-curvature estimators need a continuous PSF")
    if variant not in ("linear", "antisymmetric-count"):
        raise ValueError("variant must be 'linear' or 'antisymmetric-count'")

    _, beta0 = theory.find_beta0(psf, psf.d)
    f = scaled_linear(1.0, beta0) if variant == "linear" else antisymmetric_count(beta0)
    factor = theory.mean_curvature_limit(psf, f, psf.d)
    return f, 1.0 / factor


@lru_cache(maxsize=4)
def bw_surface_weights_2d(n_directions: int = 720) -> tuple:
    """Least-squares 2x2 perimeter weights for d = 2 BW images.

    Exact asymptotic unbiasedness over all directions is impossible for BW
    local algorithms, so the weights minimize the squared deviation of the
    per-direction asymptotic density from 1 on a dense angle grid.  Returns
    (Weights, worst_case_relative_error).
    """
    scheme = ConfigurationScheme(d=2, n=2)
    angles = (np.arange(n_directions) + 0.5) * (2.0 * math.pi / n_directions)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    cols = []
    active = range(1, scheme.n_configurations - 1)
    for l in active:
        B = scheme.black_offsets(l).astype(float)
        W = scheme.white_offsets(l).astype(float)
        diffs = (B[:, None, :] - W[None, :, :]).reshape(-1, 2)
        h = np.max(dirs @ diffs.T, axis=1)
        cols.append(np.maximum(-h, 0.0))
    A = np.stack(cols, axis=1)
    sol, *_ = np.linalg.lstsq(A, np.ones(n_directions), rcond=None)
    w = np.zeros(scheme.n_configurations)
    w[1:-1] = sol
    resid = A @ sol - 1.0
    worst = float(np.max(np.abs(resid)))
    return Weights(q=1, w=tuple(w)), worst
