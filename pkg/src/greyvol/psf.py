"""Point spread function families and their half-space intensity profiles.

Each PSF is a probability density rho on R^d.  The central derived object is
the half-space profile

    theta(t) = integral of rho(z - t*n) over {<z, n> <= 0}
             = P(<Z, n> <= -t)  for Z ~ rho,

a non-increasing function of t whose generalized inverses (the level-crossing
offsets) drive every asymptotic formula in :mod:`greyvol.theory`.

Closed forms are used wherever they exist (Gaussian, ball and box indicators,
bump); the tabulated family falls back to quadrature with a monotone cache.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import gammainc, ndtr, ndtri

from .errors import NumericalError
from .geometry import sphere_surface_area, unit_ball_volume

logger = logging.getLogger(__name__)

__all__ = [
    "Psf",
    "BallIndicator",
    "BoxIndicator",
    "Gaussian",
    "Bump",
    "TabulatedRadial",
    "HalfspaceProfile",
    "halfspace_profile",
    "profile_derivative",
    "phi",
    "is_regular_value",
    "tail_mass",
    "load_tabulated_radial",
]

_REGULAR_DERIVATIVE_TOL = 1e-9


def _unit(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, got |n| = {norm}")
    return n


class Psf:
    """Base class; subclasses fill in densities, marginals and profiles."""

    d: int
    name: str
    rotation_invariant: bool = False
    reflection_invariant: bool = True
    compact: bool = True
    continuous: bool = True
    support_radius: float = math.inf

    # -- density ----------------------------------------------------------
    def density(self, z) -> np.ndarray:
        """rho(z) for points z of shape (..., d)."""
        raise NotImplementedError

    def radial_density(self, s) -> np.ndarray:
        """Radial profile rho(|z|) for rotation-invariant PSFs."""
        raise NotImplementedError

    # -- 1D reductions ------------------------------------------------------
    def marginal(self, t, n: Optional[np.ndarray] = None) -> np.ndarray:
        """Density of <Z, n> at t, i.e. the hyperplane integral of rho over n-perp."""
        raise NotImplementedError

    def profile(self, t, n: Optional[np.ndarray] = None) -> np.ndarray:
        """Half-space profile theta(t) = P(<Z, n> <= -t)."""
        raise NotImplementedError

    # -- mass -------------------------------------------------------------
    def mass_in_ball(self, R: float) -> float:
        """Probability mass of rho inside the centered ball of radius R."""
        raise NotImplementedError

    def tail_mass(self, R: float) -> float:
        if R < 0:
            raise ValueError("R must be >= 0")
        if R == 0.0:
            return 1.0
        if self.compact and R >= self.support_radius:
            return 0.0
        return max(0.0, 1.0 - self.mass_in_ball(R))

    def truncation_radius(self, tol: float = 1e-14) -> float:
        """Radius beyond which the neglected mass is at most tol."""
        if self.compact:
            return self.support_radius
        lo, hi = 0.0, 1.0
        while self.tail_mass(hi) > tol:
            lo, hi = hi, 2.0 * hi
            if hi > 1e6:
                raise NumericalError("could not find a truncation radius")
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.tail_mass(mid) > tol:
                lo = mid
            else:
                hi = mid
        return hi

    def weighted_slice_moment(self, t: float) -> float:
        """J(t) = int_0^inf r^d rho(sqrt(t^2 + r^2)) dr for rotation-invariant PSFs.

        This is the hyperplane integral of |z|^2 rho(z - t n) over n-perp
        divided by the sphere surface factor (d-1) kappa_{d-1}; it carries
        all curvature-coupling terms of the second-order expansion.
        """
        if not self.rotation_invariant:
            raise NotImplementedError("slice moments require rotation invariance")
        S = self.truncation_radius(1e-15) if not self.compact else self.support_radius
        if abs(t) >= S:
            return 0.0
        top = math.sqrt(S * S - t * t)
        val, _ = integrate.quad(
            lambda r: r**self.d * float(self.radial_density(math.hypot(t, r))),
            0.0,
            top,
            epsabs=1e-12,
            epsrel=1e-11,
            limit=200,
        )
        return val

    # -- misc ---------------------------------------------------------------
    def validate(self) -> None:
        """Check mass normalization; subclasses with analytic mass are exact."""
        total = self.mass_in_ball(self.truncation_radius(1e-12) + 1.0)
        if abs(total - 1.0) > 1e-8:
            raise NumericalError(f"{self.name}: density mass {total} != 1")

    def descriptor(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:  # pragma: no cover
        return f"{type(self).__name__}(d={self.d})"


@dataclass(frozen=True, repr=False)
class BallIndicator(Psf):
    """Uniform density on the centered ball of radius R."""

    R: float
    d: int = 2

    rotation_invariant = True
    reflection_invariant = True
    compact = True
    continuous = False

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("radius must be positive")
        if self.d not in (2, 3):
            raise ValueError("only d = 2, 3 supported")

    @property
    def name(self) -> str:
        return "ball_indicator"

    @property
    def support_radius(self) -> float:
        return self.R

    def density(self, z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z * z, axis=-1)
        return np.where(r2 <= self.R * self.R, 1.0 / (unit_ball_volume(self.d) * self.R**self.d), 0.0)

    def radial_density(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= self.R, 1.0 / (unit_ball_volume(self.d) * self.R**self.d), 0.0)

    def marginal(self, t, n=None):
        t = np.asarray(t, dtype=float)
        h2 = np.maximum(self.R * self.R - t * t, 0.0)
        return (
            unit_ball_volume(self.d - 1)
            * h2 ** ((self.d - 1) / 2.0)
            / (unit_ball_volume(self.d) * self.R**self.d)
        )

    def profile(self, t, n=None):
        t = np.clip(np.asarray(t, dtype=float), -self.R, self.R)
        if self.d == 2:
            seg = self.R * self.R * np.arccos(t / self.R) - t * np.sqrt(
                np.maximum(self.R * self.R - t * t, 0.0)
            )
            return seg / (math.pi * self.R * self.R)
        return (self.R - t) ** 2 * (2.0 * self.R + t) / (4.0 * self.R**3)

    def mass_in_ball(self, R):
        return min(1.0, (R / self.R) ** self.d)

    def weighted_slice_moment(self, t: float) -> float:
        if abs(t) >= self.R:
            return 0.0
        A = math.sqrt(self.R * self.R - t * t)
        return A ** (self.d + 1) / ((self.d + 1) * unit_ball_volume(self.d) * self.R**self.d)

    def descriptor(self) -> dict:
        return {"variant": "ball_indicator", "R": self.R, "d": self.d}


@dataclass(frozen=True, repr=False)
class BoxIndicator(Psf):
    """Uniform density on the centered box with the given half-widths."""

    half_widths: tuple
    d: int = 0  # derived from half_widths when 0

    rotation_invariant = False
    reflection_invariant = True
    compact = True
    continuous = False

    def __post_init__(self):
        hw = tuple(float(h) for h in self.half_widths)
        if any(h <= 0 for h in hw):
            raise ValueError("half-widths must be positive")
        object.__setattr__(self, "half_widths", hw)
        object.__setattr__(self, "d", len(hw))

    @property
    def name(self) -> str:
        return "box_indicator"

    @property
    def support_radius(self) -> float:
        return math.sqrt(sum(h * h for h in self.half_widths))

    def density(self, z):
        z = np.asarray(z, dtype=float)
        hw = np.asarray(self.half_widths)
        inside = np.all(np.abs(z) <= hw, axis=-1)
        return np.where(inside, 1.0 / np.prod(2.0 * hw), 0.0)

    def _weights(self, n: np.ndarray) -> np.ndarray:
        c = np.abs(np.asarray(n, dtype=float)) * np.asarray(self.half_widths)
        return c[c > 1e-15]

    def _uniform_sum_cdf(self, y, c: np.ndarray):
        """CDF of sum of independent U[-c_i, c_i]; inclusion-exclusion closed form."""
        m = len(c)
        b = 2.0 * c
        x = np.asarray(y, dtype=float) + c.sum()
        total = np.zeros_like(x)
        for mask in range(1 << m):
            bs = sum(b[i] for i in range(m) if mask >> i & 1)
            sign = -1.0 if bin(mask).count("1") % 2 else 1.0
            total = total + sign * np.maximum(x - bs, 0.0) ** m
        return np.clip(total / (math.factorial(m) * np.prod(b)), 0.0, 1.0)

    def _uniform_sum_pdf(self, y, c: np.ndarray):
        m = len(c)
        b = 2.0 * c
        x = np.asarray(y, dtype=float) + c.sum()
        total = np.zeros_like(x)
        for mask in range(1 << m):
            bs = sum(b[i] for i in range(m) if mask >> i & 1)
            sign = -1.0 if bin(mask).count("1") % 2 else 1.0
            if m == 1:
                term = (x - bs > 0.0).astype(float)
            else:
                term = np.maximum(x - bs, 0.0) ** (m - 1)
            total = total + sign * term
        return total / (math.factorial(m - 1) * np.prod(b))

    def marginal(self, t, n=None):
        if n is None:
            n = np.eye(self.d)[0]
        c = self._weights(_unit(n))
        return self._uniform_sum_pdf(np.asarray(t, dtype=float), c)

    def profile(self, t, n=None):
        if n is None:
            n = np.eye(self.d)[0]
        c = self._weights(_unit(n))
        return self._uniform_sum_cdf(-np.asarray(t, dtype=float), c)

    def mass_in_ball(self, R):
        h = self.half_widths
        if R >= self.support_radius:
            return 1.0
        if self.d == 2:
            val, _ = integrate.quad(
                lambda x: min(h[1], math.sqrt(max(R * R - x * x, 0.0))),
                0.0,
                min(h[0], R),
                epsabs=1e-12,
            )
            return 4.0 * val / (4.0 * h[0] * h[1])

        def slab(x):
            rr = math.sqrt(max(R * R - x * x, 0.0))
            inner = BoxIndicator(half_widths=h[1:])
            return inner.mass_in_ball(rr)

        val, _ = integrate.quad(slab, 0.0, min(h[0], R), epsabs=1e-11)
        return 2.0 * val / (2.0 * h[0])

    def descriptor(self) -> dict:
        return {"variant": "box_indicator", "half_widths": list(self.half_widths), "d": self.d}


@dataclass(frozen=True, repr=False)
class Gaussian(Psf):
    """Isotropic Gaussian with standard deviation sigma (non-compact support)."""

    sigma: float
    d: int = 2

    rotation_invariant = True
    reflection_invariant = True
    compact = False
    continuous = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def name(self) -> str:
        return "gaussian"

    @property
    def support_radius(self) -> float:
        return math.inf

    def density(self, z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z * z, axis=-1)
        norm = (math.sqrt(2.0 * math.pi) * self.sigma) ** self.d
        return np.exp(-r2 / (2.0 * self.sigma**2)) / norm

    def radial_density(self, s):
        s = np.asarray(s, dtype=float)
        norm = (math.sqrt(2.0 * math.pi) * self.sigma) ** self.d
        return np.exp(-s * s / (2.0 * self.sigma**2)) / norm

    def marginal(self, t, n=None):
        t = np.asarray(t, dtype=float)
        return np.exp(-t * t / (2.0 * self.sigma**2)) / (math.sqrt(2.0 * math.pi) * self.sigma)

    def profile(self, t, n=None):
        return ndtr(-np.asarray(t, dtype=float) / self.sigma)

    def mass_in_ball(self, R):
        # |Z|^2 / sigma^2 is chi-square with d degrees of freedom.
        return float(gammainc(self.d / 2.0, R * R / (2.0 * self.sigma**2)))

    def quantile_offset(self, beta: float) -> float:
        """Exact phi(beta) = -sigma * Phi^{-1}(beta)."""
        return -self.sigma * float(ndtri(beta))

    def descriptor(self) -> dict:
        return {"variant": "gaussian", "sigma": self.sigma, "d": self.d}


@dataclass(frozen=True, repr=False)
class Bump(Psf):
    """Smooth compact radial density proportional to (1 - |z|^2 / R^2)+."""

    R: float
    d: int = 2

    rotation_invariant = True
    reflection_invariant = True
    compact = True
    continuous = True

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("radius must be positive")
        if self.d not in (2, 3):
            raise ValueError("only d = 2, 3 supported")

    @property
    def name(self) -> str:
        return "bump"

    @property
    def support_radius(self) -> float:
        return self.R

    @property
    def _rho0(self) -> float:
        return (self.d + 2) / (2.0 * unit_ball_volume(self.d) * self.R**self.d)

    def density(self, z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z * z, axis=-1)
        return self._rho0 * np.maximum(1.0 - r2 / (self.R * self.R), 0.0)

    def radial_density(self, s):
        s = np.asarray(s, dtype=float)
        return self._rho0 * np.maximum(1.0 - s * s / (self.R * self.R), 0.0)

    def marginal(self, t, n=None):
        t = np.asarray(t, dtype=float)
        A2 = np.maximum(self.R * self.R - t * t, 0.0)
        coeff = self._rho0 * 2.0 * unit_ball_volume(self.d - 1) / ((self.d + 1) * self.R**2)
        return coeff * A2 ** ((self.d + 1) / 2.0)

    def profile(self, t, n=None):
        t = np.clip(np.asarray(t, dtype=float), -self.R, self.R)
        R = self.R
        if self.d == 3:
            # marginal = 15 (R^2 - s^2)^2 / (16 R^5); integrate s from t to R
            G = lambda u: R**4 * u - 2.0 * R**2 * u**3 / 3.0 + u**5 / 5.0
            return 15.0 / (16.0 * R**5) * (G(R) - G(t))
        # d = 2: marginal = 8 (R^2 - s^2)^{3/2} / (3 pi R^4)
        F = (
            t * np.maximum(R * R - t * t, 0.0) ** 1.5 / 4.0
            + 3.0 * R * R / 8.0 * (t * np.sqrt(np.maximum(R * R - t * t, 0.0)) + R * R * np.arcsin(t / R))
        )
        F_R = 3.0 * math.pi * R**4 / 16.0
        return 8.0 / (3.0 * math.pi * R**4) * (F_R - F)

    def mass_in_ball(self, R):
        r = min(R, self.R)
        val = self._rho0 * sphere_surface_area(self.d) * (
            r**self.d / self.d - r ** (self.d + 2) / ((self.d + 2) * self.R**2)
        )
        return min(1.0, val)

    def weighted_slice_moment(self, t: float) -> float:
        if abs(t) >= self.R:
            return 0.0
        A2 = self.R * self.R - t * t
        return self._rho0 * 2.0 * A2 ** ((self.d + 3) / 2.0) / ((self.d + 1) * (self.d + 3) * self.R**2)

    def descriptor(self) -> dict:
        return {"variant": "bump", "R": self.R, "d": self.d}


@dataclass(repr=False)
class TabulatedRadial(Psf):
    """Rotation-invariant density given by a sampled radial profile.

    The profile is linearly interpolated between the grid nodes and
    renormalized to unit mass on construction (the factor is logged).
    """

    radii: np.ndarray
    values: np.ndarray
    d: int = 2

    rotation_invariant = True
    reflection_invariant = True
    compact = True
    continuous = True

    _profile_cache: Optional[PchipInterpolator] = field(default=None, compare=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or len(r) < 2:
            raise ValueError("radius and density grids must be equal-length 1D arrays")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValueError("radius grid must be strictly increasing and nonnegative")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        mass = self._raw_mass(r, v)
        if mass <= 0:
            raise ValueError("tabulated density has zero mass")
        if abs(mass - 1.0) > 1e-12:
            logger.info("tabulated radial psf renormalized by factor %.12g", 1.0 / mass)
        self.radii = r
        self.values = v / mass

    def _raw_mass(self, r, v) -> float:
        integrand = lambda s: np.interp(s, r, v, left=v[0], right=0.0) * sphere_surface_area(self.d) * s ** (self.d - 1)
        val, _ = integrate.quad(integrand, 0.0, r[-1], epsabs=1e-13, limit=400)
        return val

    @property
    def name(self) -> str:
        return "tabulated_radial"

    @property
    def support_radius(self) -> float:
        return float(self.radii[-1])

    def density(self, z):
        z = np.asarray(z, dtype=float)
        s = np.sqrt(np.sum(z * z, axis=-1))
        return self.radial_density(s)

    def radial_density(self, s):
        s = np.asarray(s, dtype=float)
        return np.interp(s, self.radii, self.values, left=self.values[0], right=0.0)

    def marginal(self, t, n=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        S = self.support_radius
        for i, ti in enumerate(np.abs(t)):
            if ti >= S:
                continue
            if self.d == 3:
                val, _ = integrate.quad(
                    lambda q: float(self.radial_density(q)) * q, ti, S, epsabs=1e-12, limit=200
                )
                out[i] = 2.0 * math.pi * val
            else:
                top = math.sqrt(S * S - ti * ti)
                val, _ = integrate.quad(
                    lambda y: float(self.radial_density(math.hypot(ti, y))),
                    0.0,
                    top,
                    epsabs=1e-12,
                    limit=200,
                )
                out[i] = 2.0 * val
        return out if out.shape else float(out)

    def _ensure_profile(self):
        if self._profile_cache is None:
            S = self.support_radius
            ts = np.linspace(-S, S, 2001)
            dens = np.array([float(self.marginal(t)) for t in ts])
            # cumulative from the right: theta(t) = int_t^S m(s) ds
            cum = integrate.cumulative_simpson(dens[::-1], x=ts[::-1] * -1.0, initial=0.0)
            theta = cum[::-1]
            theta = np.clip(theta, 0.0, None)
            self._profile_cache = PchipInterpolator(ts, theta, extrapolate=False)

    def profile(self, t, n=None):
        self._ensure_profile()
        t = np.asarray(t, dtype=float)
        S = self.support_radius
        out = self._profile_cache(np.clip(t, -S, S))
        return np.where(t <= -S, 1.0, np.where(t >= S, 0.0, out))

    def mass_in_ball(self, R):
        r = min(R, self.support_radius)
        integrand = lambda s: float(self.radial_density(s)) * sphere_surface_area(self.d) * s ** (self.d - 1)
        val, _ = integrate.quad(integrand, 0.0, r, epsabs=1e-12, limit=400)
        return min(1.0, val)

    def descriptor(self) -> dict:
        return {
            "variant": "tabulated_radial",
            "d": self.d,
            "radii": self.radii.tolist(),
            "values": self.values.tolist(),
        }


def load_tabulated_radial(path, d: int = 2) -> TabulatedRadial:
    """Load a two-column CSV (radius, density) into a TabulatedRadial PSF."""
    data = np.loadtxt(path, delimiter=",", dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("expected a two-column CSV of (radius, density)")
    return TabulatedRadial(radii=data[:, 0], values=data[:, 1], d=d)


# ---------------------------------------------------------------------------
# module-level operations on profiles


def halfspace_profile(psf: Psf, n, t):
    """theta^{H_n}(t n): intensity of the half-space {<z, n> <= 0} seen at t*n."""
    n = _unit(n)
    return psf.profile(t, n)


def profile_derivative(psf: Psf, n, t):
    """d/dt theta^{H_n}(t n) = -(hyperplane marginal of rho at -t); nonpositive.

    For indicator PSFs the marginal may jump at finitely many t; the value
    returned there is the right-continuous branch of the closed form.
    """
    n = _unit(n)
    return -np.asarray(psf.marginal(-np.asarray(t, dtype=float), n))


def phi(psf: Psf, n, beta: float, convention: str = "inf") -> float:
    """Level-crossing offset of the half-space profile at level beta.

    convention="inf" returns inf{t : theta(t) <= beta}; convention="sup"
    returns sup{t : theta(t) >= beta}.  The two agree except across plateaus
    of the profile (beta not a regular value).  Bisection to |dt| <= 1e-13.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if convention not in ("inf", "sup"):
        raise ValueError("convention must be 'inf' or 'sup'")
    n = _unit(n)
    if isinstance(psf, Gaussian):
        return psf.quantile_offset(beta)

    if psf.compact:
        lo, hi = -psf.support_radius, psf.support_radius
    else:
        lo, hi = -1.0, 1.0
        while float(psf.profile(lo, n)) <= beta:
            lo *= 2.0
        while float(psf.profile(hi, n)) > beta:
            hi *= 2.0

    if convention == "inf":
        # theta(lo) > beta, predicate theta(t) <= beta true at hi
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            if float(psf.profile(mid, n)) <= beta:
                hi = mid
            else:
                lo = mid
        return hi
    # sup{t : theta(t) >= beta}
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if float(psf.profile(mid, n)) >= beta:
            lo = mid
        else:
            hi = mid
    return lo


def is_regular_value(psf: Psf, n, beta: float) -> bool:
    """True iff the profile has nonvanishing slope where it crosses beta."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    t = phi(psf, n, beta)
    return abs(float(profile_derivative(psf, n, t))) > _REGULAR_DERIVATIVE_TOL


def tail_mass(psf: Psf, R: float) -> float:
    """Mass of rho outside the centered ball of radius R."""
    return psf.tail_mass(R)


@dataclass
class HalfspaceProfile:
    """Bound (psf, direction) pair exposing the monotone profile t -> theta(t)."""

    psf: Psf
    n: np.ndarray

    def __post_init__(self):
        self.n = _unit(self.n)

    def value(self, t):
        return self.psf.profile(t, self.n)

    def derivative(self, t):
        return profile_derivative(self.psf, self.n, t)

    def phi(self, beta: float, convention: str = "inf") -> float:
        return phi(self.psf, self.n, beta, convention)

    def phi_prime(self, beta: float) -> float:
        """d phi / d beta = 1 / theta'(phi(beta)); negative at regular values."""
        t = self.phi(beta)
        der = float(self.derivative(t))
        if abs(der) <= _REGULAR_DERIVATIVE_TOL:
            raise NumericalError(f"beta = {beta} is not a regular value for this profile")
        return 1.0 / der

    def is_regular(self, beta: float) -> bool:
        return is_regular_value(self.psf, self.n, beta)
