"""Exact evaluation of the asymptotic formulas for local grey-scale estimators.

First-order limits are integrals of weight functions against the level
measure generated by the half-space profile's inverse; second-order terms
couple the boundary curvature to radial moments of the PSF.  All 1D
quadratures are adaptive with absolute tolerance 1e-9 or better; interval
indicators are handled in closed form through the level-crossing offsets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .errors import IncompatibilityError, NumericalError
from .geometry import sphere_surface_area, unit_ball_volume
from .phantom import PolytopeAtoms, SphereUniform, SurfaceMeasure
from .psf import Psf, phi as psf_phi, profile_derivative
from .weights import WeightFunction, Weights

__all__ = [
    "DirectionGrid",
    "AsymptoticPrediction",
    "support_function",
    "mu_integral",
    "nu_integral",
    "first_order_mean",
    "bw_first_order_mean",
    "worst_case_error",
    "symmetrize",
    "psi_Q",
    "constants_c123",
    "find_beta0",
    "d2_function",
    "second_order_mean_sphere",
    "mean_curvature_limit",
]

_QUAD_OPTS = dict(epsabs=1e-11, epsrel=1e-10, limit=300)


def _e1(d: int) -> np.ndarray:
    n = np.zeros(d)
    n[0] = 1.0
    return n


# ---------------------------------------------------------------------------
# direction grids


@dataclass(frozen=True)
class DirectionGrid:
    """Unit vectors with quadrature weights integrating over the unit sphere."""

    vectors: np.ndarray
    weights: np.ndarray
    d: int
    size: int

    @staticmethod
    def build(d: int, size: int = 64) -> "DirectionGrid":
        if d == 2:
            angles = np.arange(size) * (2.0 * math.pi / size)
            vecs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
            wts = np.full(size, 2.0 * math.pi / size)
            return DirectionGrid(vectors=vecs, weights=wts, d=2, size=size)
        if d == 3:
            z, wz = np.polynomial.legendre.leggauss(size)
            m = 2 * size
            phis = np.arange(m) * (2.0 * math.pi / m)
            zz, pp = np.meshgrid(z, phis, indexing="ij")
            s = np.sqrt(np.maximum(1.0 - zz * zz, 0.0))
            vecs = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1).reshape(-1, 3)
            wts = np.repeat(wz, m) * (2.0 * math.pi / m)
            return DirectionGrid(vectors=vecs, weights=wts, d=3, size=size)
        raise ValueError("direction grids support d = 2, 3")

    def refine(self) -> "DirectionGrid":
        return DirectionGrid.build(self.d, self.size * 2)


# ---------------------------------------------------------------------------
# support functions and level measures


def support_function(points, n) -> float:
    """h(S, n) = max over the finite point set S of <s, n>."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("support function of the empty set is undefined")
    return float(np.max(pts @ np.asarray(n, dtype=float)))


def _t_of_level(psf: Psf, n: np.ndarray, x: float) -> float:
    """Profile offset at which theta crosses level x, with 0/1 mapped to the support ends."""
    if x <= 0.0:
        if not psf.compact:
            raise IncompatibilityError(
                "weight supported at grey value 0 requires a compactly supported PSF"
            )
        return psf.support_radius
    if x >= 1.0:
        if not psf.compact:
            raise IncompatibilityError(
                "weight supported at grey value 1 requires a compactly supported PSF"
            )
        return -psf.support_radius
    return psf_phi(psf, n, x)


def _is_piecewise_constant(f: WeightFunction) -> bool:
    return all(abs(c1) == 0.0 for _, c1 in f.coeffs)


def mu_integral(psf: Psf, n, f: WeightFunction) -> float:
    """Integral of f against the level measure mu_n generated by -phi(., n).

    Equals the t-integral of f(theta(t)); interval indicators reduce to
    differences of level-crossing offsets and are returned exactly.
    """
    n = np.asarray(n, dtype=float)
    if _is_piecewise_constant(f):
        total = 0.0
        for lo, hi, c0, _ in f.pieces():
            if c0 == 0.0:
                continue
            total += c0 * (_t_of_level(psf, n, lo) - _t_of_level(psf, n, hi))
        return total
    t_pts = [_t_of_level(psf, n, x) for x in f.breaks]
    t_min, t_max = min(t_pts), max(t_pts)
    interior = sorted({t for t in t_pts if t_min < t < t_max})
    val, _ = integrate.quad(
        lambda t: float(f(float(psf.profile(t, n)))),
        t_min,
        t_max,
        points=interior or None,
        **_QUAD_OPTS,
    )
    return val


def nu_integral(psf: Psf, n, f: WeightFunction) -> float:
    """Integral of f against the signed second-order level measure nu_n.

    Equals the t-integral of t * f(theta(t)); exact for interval indicators.
    """
    n = np.asarray(n, dtype=float)
    if _is_piecewise_constant(f):
        total = 0.0
        for lo, hi, c0, _ in f.pieces():
            if c0 == 0.0:
                continue
            t_hi = _t_of_level(psf, n, lo)
            t_lo = _t_of_level(psf, n, hi)
            total += c0 * 0.5 * (t_hi * t_hi - t_lo * t_lo)
        return total
    t_pts = [_t_of_level(psf, n, x) for x in f.breaks]
    t_min, t_max = min(t_pts), max(t_pts)
    interior = sorted({t for t in t_pts if t_min < t < t_max})
    val, _ = integrate.quad(
        lambda t: t * float(f(float(psf.profile(t, n)))),
        t_min,
        t_max,
        points=interior or None,
        **_QUAD_OPTS,
    )
    return val


def first_order_mean(measure: SurfaceMeasure, psf: Psf, f: WeightFunction, grid: Optional[DirectionGrid] = None) -> float:
    """Limit of the rescaled design-based mean: boundary integral of mu_n(f).

    Rotation-invariant PSFs factor into (surface mass) * (single mu integral);
    polytopes evaluate the finitely many facet normals; spheres with direction-
    dependent PSFs integrate over a direction grid.
    """
    if isinstance(measure, PolytopeAtoms):
        return float(
            sum(area * mu_integral(psf, np.asarray(nvec), f) for nvec, area in measure.atoms)
        )
    if psf.rotation_invariant:
        return measure.mass * mu_integral(psf, _e1(psf.d), f)
    grid = grid or DirectionGrid.build(measure.d, 128 if measure.d == 2 else 24)
    vals = np.array([mu_integral(psf, nvec, f) for nvec in grid.vectors])
    return float(measure.radius ** (measure.d - 1) * np.dot(grid.weights, vals))


def bw_first_order_mean(
    measure: SurfaceMeasure,
    scheme,
    weights: Weights,
    grid: Optional[DirectionGrid] = None,
) -> float:
    """First-order limit of a BW configuration-count estimator's rescaled mean.

    Sum over configurations of w_l times the boundary integral of
    (-h(B_l + reflected W_l, n))^+.  Weights on the all-white and all-black
    configurations have no finite first-order limit and are rejected.
    """
    w = weights.array
    if w[0] != 0.0 or w[-1] != 0.0:
        raise IncompatibilityError(
            "nonzero weight on the all-white or all-black configuration has no "
            "finite first-order limit; set w[0] = w[-1] = 0"
        )

    active = [l for l in range(1, len(w) - 1) if w[l] != 0.0]
    if not active:
        return 0.0

    diff_sets = {}
    for l in active:
        B = scheme.black_offsets(l).astype(float)
        W = scheme.white_offsets(l).astype(float)
        diff_sets[l] = (B[:, None, :] - W[None, :, :]).reshape(-1, scheme.d)

    def integrand(nvec: np.ndarray) -> float:
        total = 0.0
        for l in active:
            h = np.max(diff_sets[l] @ nvec)
            total += w[l] * max(-h, 0.0)
        return total

    if isinstance(measure, PolytopeAtoms):
        return float(sum(area * integrand(np.asarray(nvec)) for nvec, area in measure.atoms))
    grid = grid or DirectionGrid.build(measure.d, 512 if measure.d == 2 else 48)
    vals = np.array([integrand(nvec) for nvec in grid.vectors])
    return float(measure.radius ** (measure.d - 1) * np.dot(grid.weights, vals))


def worst_case_error(psf: Psf, f: WeightFunction, grid: Optional[DirectionGrid] = None) -> float:
    """sup over directions of |2 * mu_n(f) - 1|, the worst-case relative bias.

    Nested grid refinement until the supremum moves by less than 1e-4, then a
    local polish around the best direction.
    """
    if psf.rotation_invariant:
        return abs(2.0 * mu_integral(psf, _e1(psf.d), f) - 1.0)

    def err_of(nvec) -> float:
        return abs(2.0 * mu_integral(psf, np.asarray(nvec), f) - 1.0)

    grid = grid or DirectionGrid.build(psf.d, 32 if psf.d == 2 else 12)
    best, prev = -1.0, None
    best_vec = None
    for _ in range(6):
        vals = np.array([err_of(v) for v in grid.vectors])
        best = float(vals.max())
        best_vec = grid.vectors[int(vals.argmax())]
        if prev is not None and abs(best - prev) < 1e-4:
            break
        prev = best
        grid = grid.refine()

    if psf.d == 2:
        ang0 = math.atan2(best_vec[1], best_vec[0])
        span = 2.0 * math.pi / grid.size
        res = optimize.minimize_scalar(
            lambda ang: -err_of(np.array([math.cos(ang), math.sin(ang)])),
            bounds=(ang0 - span, ang0 + span),
            method="bounded",
            options={"xatol": 1e-8},
        )
        best = max(best, float(-res.fun))
    return best


def symmetrize(f: WeightFunction) -> WeightFunction:
    """f_tilde(x) = (f(x) + f(1 - x)) / 2; never increases the worst-case error."""
    out = f.combined_with(f.reflected(), 0.5, 0.5)
    return WeightFunction(
        breaks=out.breaks,
        coeffs=out.coeffs,
        at_breaks=out.at_breaks,
        form={"kind": "symmetrized", "base": f.form},
    )


# ---------------------------------------------------------------------------
# second-order machinery (constant-curvature boundaries)


def _hyperplane_second_moment(psf: Psf, n: np.ndarray, t: float) -> float:
    """M2(t, n) = integral over the hyperplane n-perp of |z|^2 rho(z - t n)."""
    if psf.rotation_invariant:
        return (psf.d - 1) * unit_ball_volume(psf.d - 1) * psf.weighted_slice_moment(t)
    S = psf.support_radius if psf.compact else psf.truncation_radius(1e-15)
    if abs(t) >= S:
        return 0.0
    top = math.sqrt(S * S - t * t)
    if psf.d == 2:
        p = np.array([-n[1], n[0]])

        def f1(s):
            return s * s * float(psf.density(-t * n + s * p))

        val, _ = integrate.quad(f1, -top, top, **_QUAD_OPTS)
        return val
    # d = 3: polar coordinates in the hyperplane
    u = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, u)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)

    def f2(r):
        nodes = 64
        angs = (np.arange(nodes) + 0.5) * (2.0 * math.pi / nodes)
        pts = -t * n + r * (np.outer(np.cos(angs), e1) + np.outer(np.sin(angs), e2))
        return r**3 * float(np.mean(psf.density(pts))) * 2.0 * math.pi

    val, _ = integrate.quad(f2, 0.0, top, epsabs=1e-9, epsrel=1e-8, limit=100)
    return val


def _phi_prime(psf: Psf, n: np.ndarray, beta: float) -> float:
    t = psf_phi(psf, n, beta)
    der = float(profile_derivative(psf, n, t))
    if abs(der) <= 1e-9:
        raise NumericalError(f"level {beta} is not a regular value of the profile")
    return 1.0 / der


def psi_Q(psf: Psf, tr_II: float, beta: float, n: Optional[np.ndarray] = None) -> float:
    """Curvature-driven first-order shift of the level crossing at level beta.

    For an isotropic second fundamental form with trace tr_II this equals
    (tr_II / (2 (d-1))) * M2(phi(beta), n) * phi'(beta); negative for convex
    boundaries since the crossing moves inward.
    """
    if tr_II == 0.0:
        return 0.0
    if not psf.continuous or not psf.compact:
        raise IncompatibilityError("the crossing-shift formula needs a continuous compact PSF")
    n = _e1(psf.d) if n is None else np.asarray(n, dtype=float)
    m2 = _hyperplane_second_moment(psf, n, psf_phi(psf, n, beta))
    return 0.5 * tr_II / (psf.d - 1) * m2 * _phi_prime(psf, n, beta)


def _jump_shift_sum(psf: Psf, f: WeightFunction, n: np.ndarray) -> float:
    """Sum over f-jumps of (jump size) * psi_Q(level) with tr_II divided out."""
    total = 0.0
    for x, left, right in f.jumps():
        m2 = _hyperplane_second_moment(psf, n, _t_of_level(psf, n, x))
        total += (right - left) * 0.5 / (psf.d - 1) * m2 * _phi_prime(psf, n, x)
    return total


def _slope_term(psf: Psf, f: WeightFunction, n: np.ndarray) -> float:
    """-1/(2(d-1)) * integral of f'(theta(t)) M2(t, n) dt, tr_II divided out."""
    total = 0.0
    for lo, hi, _, c1 in f.pieces():
        if c1 == 0.0:
            continue
        t_hi = _t_of_level(psf, n, lo)
        t_lo = _t_of_level(psf, n, hi)
        val, _ = integrate.quad(
            lambda t: _hyperplane_second_moment(psf, n, t), t_lo, t_hi, epsabs=1e-10, epsrel=1e-9, limit=200
        )
        total += -0.5 / (psf.d - 1) * c1 * val
    return total


def constants_c123(psf: Psf, f: WeightFunction, beta: float, d: int) -> tuple:
    """The three constants whose sum fixes the mean-curvature limit factor.

    Requires a rotation-invariant continuous compact PSF and an antisymmetric
    f supported on [beta, 1 - beta].  c1 is the second-order level integral,
    c2 the boundary-jump shift, c3 the slope-coupled radial moment.
    """
    if d != psf.d:
        raise ValueError("dimension mismatch with the PSF")
    if not (psf.rotation_invariant and psf.continuous and psf.compact):
        raise IncompatibilityError("need a rotation-invariant continuous compact PSF")
    if not f.is_antisymmetric(1e-10):
        raise IncompatibilityError("need an antisymmetric weight function f(x) = -f(1-x)")
    lo, hi = f.support
    if abs(lo - beta) > 1e-12 or abs(hi - (1.0 - beta)) > 1e-12:
        raise ValueError("f must be supported on [beta, 1 - beta]")
    n = _e1(d)
    kappa = unit_ball_volume(d - 1)
    c1 = nu_integral(psf, n, f)
    T = psf_phi(psf, n, beta)
    c2 = kappa * f.right_limit(beta) * _phi_prime(psf, n, beta) * psf.weighted_slice_moment(T)
    c3 = 0.0
    for plo, phi_hi, _, slope in f.pieces():
        if slope == 0.0:
            continue
        t_hi = _t_of_level(psf, n, plo)
        t_lo = _t_of_level(psf, n, phi_hi)
        val, _ = integrate.quad(
            lambda t: psf.weighted_slice_moment(t), t_lo, t_hi, epsabs=1e-11, epsrel=1e-10, limit=200
        )
        c3 += -0.5 * kappa * slope * val
    return (c1, c2, c3)


def d2_function(psf: Psf, d: int):
    """The auxiliary function d2 whose interior maximum locates beta_0.

    d2(t) = (1/2) * integral over s in [-t, t] of
            (kappa_{d-1} J(s) - s^2 m(s)) ds,
    where J is the weighted radial slice moment and m the hyperplane marginal.
    Returns (d2, d2_prime) as callables.
    """
    if not (psf.rotation_invariant and psf.continuous and psf.compact):
        raise IncompatibilityError("need a rotation-invariant continuous compact PSF")
    kappa = unit_ball_volume(d - 1)

    def g(s: float) -> float:
        return kappa * psf.weighted_slice_moment(s) - s * s * float(psf.marginal(s))

    def d2(t: float) -> float:
        val, _ = integrate.quad(g, 0.0, t, epsabs=1e-12, epsrel=1e-11, limit=200)
        return val

    return d2, g


def find_beta0(psf: Psf, d: int) -> tuple:
    """Locate the interior maximum t0 of d2 and the corresponding level beta_0.

    Golden-section/bounded minimization after a coarse scan over (0, D);
    beta_0 = theta(t0).  Raises if no strictly positive interior maximum
    exists (then the linear mean-curvature estimator is degenerate).
    """
    d2, d2p = d2_function(psf, d)
    D = psf.support_radius
    ts = np.linspace(1e-6, D * (1.0 - 1e-9), 241)
    vals = np.array([d2(float(t)) for t in ts])
    i = int(vals.argmax())
    lo = ts[max(i - 1, 0)]
    hi = ts[min(i + 1, len(ts) - 1)]
    res = optimize.minimize_scalar(
        lambda t: -d2(float(t)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10}
    )
    t0 = float(res.x)
    if d2(t0) <= 0.0 or not (0.0 < t0 < D):
        raise NumericalError("d2 has no positive interior maximum; beta_0 undefined")
    beta0 = float(psf.profile(t0))
    return (t0, beta0)


@dataclass(frozen=True)
class AsymptoticPrediction:
    """Coefficients of the a-expansion of the blurred weight integral.

    integral of f(theta_a) over space = a * order1 + a^2 * order2 + o(a^2);
    the design-based mean of the estimator with exponent q follows by the
    a^(q-d) prefactor.
    """

    order1: float
    order2: Optional[float]
    d: int
    notes: dict = field(default_factory=dict)

    def mean(self, a: float, q: int) -> float:
        val = a ** (q - self.d + 1) * self.order1
        if self.order2 is not None:
            val += a ** (q - self.d + 2) * self.order2
        return val


def second_order_mean_sphere(psf: Psf, f: WeightFunction, R: float, d: int, a: Optional[float] = None) -> AsymptoticPrediction:
    """Second-order expansion of the mean for a ball phantom of radius R.

    The order-1 coefficient is the surface area times the level integral; the
    order-2 coefficient couples the (constant) curvature trace to the level
    measure nu, the slope term and the jump shifts.  Interior jumps of f go
    beyond the smoothness hypotheses and are handled by summing jump-weighted
    crossing shifts; a warning marks predictions using that extension.
    """
    if d != psf.d:
        raise ValueError("dimension mismatch with the PSF")
    surface = sphere_surface_area(d, R)
    tr_II = (d - 1) / R
    hypotheses_ok = psf.continuous and psf.compact
    if psf.rotation_invariant:
        n = _e1(d)
        order1 = surface * mu_integral(psf, n, f)
        if not hypotheses_ok:
            return AsymptoticPrediction(
                order1=order1, order2=None, d=d, notes={"order2": "psf outside theorem hypotheses"}
            )
        density = tr_II * (nu_integral(psf, n, f) + _slope_term(psf, f, n) + _jump_shift_sum(psf, f, n))
        order2 = surface * density
    else:
        grid = DirectionGrid.build(d, 128 if d == 2 else 24)
        mu_vals = np.array([mu_integral(psf, v, f) for v in grid.vectors])
        order1 = R ** (d - 1) * float(np.dot(grid.weights, mu_vals))
        if not hypotheses_ok:
            return AsymptoticPrediction(
                order1=order1, order2=None, d=d, notes={"order2": "psf outside theorem hypotheses"}
            )
        dens_vals = np.array(
            [
                tr_II * (nu_integral(psf, v, f) + _slope_term(psf, f, v) + _jump_shift_sum(psf, f, v))
                for v in grid.vectors
            ]
        )
        order2 = R ** (d - 1) * float(np.dot(grid.weights, dens_vals))

    interior = [x for x, _, _ in f.jumps() if f.support[0] < x < f.support[1]]
    notes = {}
    if interior:
        warnings.warn(
            "second-order prediction uses the jump-sum extension at interior "
            f"jump levels {interior}; validated empirically, not by the theorem",
            RuntimeWarning,
            stacklevel=2,
        )
        notes["jump_sum_extension"] = interior
    return AsymptoticPrediction(order1=order1, order2=order2, d=d, notes=notes)


def mean_curvature_limit(psf: Psf, f: WeightFunction, d: int) -> float:
    """Limit factor of the q = d-2 estimator: its mean tends to factor * V_{d-2}.

    factor = 2 pi (c1 + c2 + c3) with c2 generalized to the sum of
    jump-weighted crossing shifts, so piecewise-constant antisymmetric
    weights are covered as well.  Raises when the factor is numerically zero.
    """
    if d != psf.d:
        raise ValueError("dimension mismatch with the PSF")
    if not (psf.rotation_invariant and psf.continuous and psf.compact):
        raise IncompatibilityError("need a rotation-invariant continuous compact PSF")
    n = _e1(d)
    c1 = nu_integral(psf, n, f)
    cjump = _jump_shift_sum(psf, f, n)
    c3 = _slope_term(psf, f, n)
    factor = 2.0 * math.pi * (c1 + cjump + c3)
    if abs(factor) < 1e-8:
        raise NumericalError("mean-curvature limit factor vanishes; estimator degenerate")
    return factor
