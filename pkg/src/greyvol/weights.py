"""Grey-value weight functions f on [0, 1] and black-and-white weight vectors.

All built-in weight functions are piecewise affine with finitely many jumps,
which is exactly what the asymptotic machinery needs: interval indicators
integrate against the level measures in closed form, and the second-order
expansion consumes the jump list and the piecewise slopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "WeightFunction",
    "indicator",
    "symmetric_indicator",
    "scaled_linear",
    "antisymmetric_count",
    "table",
    "zero_function",
    "Weights",
]


@dataclass(frozen=True)
class WeightFunction:
    """Piecewise-affine weight f: [0, 1] -> R, zero outside [breaks[0], breaks[-1]].

    ``coeffs[i] = (c0, c1)`` gives f(x) = c0 + c1 x on the open interval
    (breaks[i], breaks[i+1]); ``at_breaks[i]`` is the value exactly at the
    i-th breakpoint (it matters on quantized images, not for integrals).
    """

    breaks: tuple
    coeffs: tuple  # of (c0, c1)
    at_breaks: tuple
    form: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        if b.ndim != 1 or len(b) < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing, at least two")
        if len(self.coeffs) != len(b) - 1 or len(self.at_breaks) != len(b):
            raise ValueError("inconsistent piecewise representation")
        if not (b[0] >= 0.0 and b[-1] <= 1.0):
            raise ValueError("weight functions are defined on [0, 1]")
        object.__setattr__(self, "breaks", tuple(float(v) for v in b))
        object.__setattr__(self, "coeffs", tuple((float(c0), float(c1)) for c0, c1 in self.coeffs))
        object.__setattr__(self, "at_breaks", tuple(float(v) for v in self.at_breaks))
        if abs(float(self(0.0))) > 0.0:
            raise ValueError("weight functions must satisfy f(0) = 0")

    # -- evaluation ---------------------------------------------------------
    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        b = np.asarray(self.breaks)
        c = np.asarray(self.coeffs)
        out = np.zeros_like(x)
        pos_l = np.searchsorted(b, x, side="left")
        pos_r = np.searchsorted(b, x, side="right")
        on_break = pos_r > pos_l
        out[on_break] = np.asarray(self.at_breaks)[pos_l[on_break]]
        strict = (~on_break) & (x > b[0]) & (x < b[-1])
        idx = pos_r[strict] - 1
        out[strict] = c[idx, 0] + c[idx, 1] * x[strict]
        return float(out[0]) if scalar else out

    # -- structure ----------------------------------------------------------
    @property
    def support(self) -> tuple:
        return (self.breaks[0], self.breaks[-1])

    def pieces(self):
        """Yield (lo, hi, c0, c1) for each affine piece."""
        for i, (c0, c1) in enumerate(self.coeffs):
            yield (self.breaks[i], self.breaks[i + 1], c0, c1)

    def right_limit(self, x: float) -> float:
        """lim f(y) as y decreases to x."""
        for lo, hi, c0, c1 in self.pieces():
            if lo <= x < hi:
                return c0 + c1 * x
        return 0.0

    def left_limit(self, x: float) -> float:
        """lim f(y) as y increases to x."""
        for lo, hi, c0, c1 in self.pieces():
            if lo < x <= hi:
                return c0 + c1 * x
        return 0.0

    def jumps(self):
        """One-sided limits at the breakpoints: list of (x, f_minus, f_plus)."""
        out = []
        for i, x in enumerate(self.breaks):
            left = 0.0
            if i > 0:
                c0, c1 = self.coeffs[i - 1]
                left = c0 + c1 * x
            right = 0.0
            if i < len(self.coeffs):
                c0, c1 = self.coeffs[i]
                right = c0 + c1 * x
            if left != right:
                out.append((x, left, right))
        return out

    def bound(self) -> float:
        vals = [abs(v) for v in self.at_breaks]
        for lo, hi, c0, c1 in self.pieces():
            vals.extend([abs(c0 + c1 * lo), abs(c0 + c1 * hi)])
        return max(vals)

    # -- algebra --------------------------------------------------------------
    def scaled(self, s: float) -> "WeightFunction":
        return WeightFunction(
            breaks=self.breaks,
            coeffs=tuple((s * c0, s * c1) for c0, c1 in self.coeffs),
            at_breaks=tuple(s * v for v in self.at_breaks),
            form={"kind": "scaled", "scale": s, "base": self.form},
        )

    def reflected(self) -> "WeightFunction":
        """x -> f(1 - x)."""
        b = tuple(1.0 - x for x in reversed(self.breaks))
        coeffs = tuple((c0 + c1, -c1) for c0, c1 in reversed(self.coeffs))
        at_b = tuple(reversed(self.at_breaks))
        return WeightFunction(breaks=b, coeffs=coeffs, at_breaks=at_b, form={"kind": "reflected", "base": self.form})

    def combined_with(self, other: "WeightFunction", w_self: float, w_other: float) -> "WeightFunction":
        """w_self * f + w_other * g on the merged breakpoint grid."""
        b = np.unique(np.concatenate([self.breaks, other.breaks]))

        def coeff_at(f: "WeightFunction", lo: float, hi: float) -> tuple:
            for plo, phi_, c0, c1 in f.pieces():
                if plo <= lo and hi <= phi_:
                    return (c0, c1)
            return (0.0, 0.0)

        coeffs = []
        for lo, hi in zip(b[:-1], b[1:]):
            s0, s1 = coeff_at(self, lo, hi)
            o0, o1 = coeff_at(other, lo, hi)
            coeffs.append((w_self * s0 + w_other * o0, w_self * s1 + w_other * o1))
        at_b = tuple(w_self * self(x) + w_other * other(x) for x in b)
        return WeightFunction(
            breaks=tuple(b),
            coeffs=tuple(coeffs),
            at_breaks=at_b,
            form={"kind": "combination"},
        )

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        """f(x) = f(1 - x) up to tol, checked on a dense grid and the breaks."""
        return self._matches_reflection(+1.0, tol)

    def is_antisymmetric(self, tol: float = 1e-12) -> bool:
        """f(x) = -f(1 - x) up to tol (away from breakpoints)."""
        return self._matches_reflection(-1.0, tol)

    def _matches_reflection(self, sign: float, tol: float) -> bool:
        xs = np.linspace(1e-4, 1.0 - 1e-4, 1001)
        xs = xs[np.all(np.abs(xs[:, None] - np.asarray(self.breaks)[None, :]) > 1e-6, axis=1)]
        xs = xs[np.all(np.abs((1.0 - xs)[:, None] - np.asarray(self.breaks)[None, :]) > 1e-6, axis=1)]
        return bool(np.all(np.abs(self(xs) - sign * self(1.0 - xs)) <= tol))

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "breaks": list(self.breaks),
            "coeffs": [list(c) for c in self.coeffs],
            "at_breaks": list(self.at_breaks),
            "form": self.form,
        }

    @staticmethod
    def from_dict(d: dict) -> "WeightFunction":
        return WeightFunction(
            breaks=tuple(d["breaks"]),
            coeffs=tuple(tuple(c) for c in d["coeffs"]),
            at_breaks=tuple(d["at_breaks"]),
            form=d.get("form", {}),
        )


def indicator(beta: float, omega: float, closed_left: bool = False, closed_right: bool = True) -> WeightFunction:
    """Indicator of the interval from beta to omega with selectable end openness."""
    if not 0.0 <= beta < omega <= 1.0:
        raise ValueError("need 0 <= beta < omega <= 1")
    if beta == 0.0 and closed_left:
        raise ValueError("f(0) = 0 is required; the left end cannot be closed at 0")
    return WeightFunction(
        breaks=(beta, omega),
        coeffs=((1.0, 0.0),),
        at_breaks=(1.0 if closed_left else 0.0, 1.0 if closed_right else 0.0),
        form={"kind": "indicator", "beta": beta, "omega": omega, "closed_left": closed_left, "closed_right": closed_right},
    )


def symmetric_indicator(beta: float) -> WeightFunction:
    """Indicator of the symmetric open interval (beta, 1 - beta)."""
    if not 0.0 < beta < 0.5:
        raise ValueError("need beta in (0, 1/2)")
    return WeightFunction(
        breaks=(beta, 1.0 - beta),
        coeffs=((1.0, 0.0),),
        at_breaks=(0.0, 0.0),
        form={"kind": "symmetric_indicator", "beta": beta},
    )


def scaled_linear(scale: float, beta0: float) -> WeightFunction:
    """scale * (x - 1/2) on the symmetric interval (beta0, 1 - beta0)."""
    if not 0.0 < beta0 < 0.5:
        raise ValueError("need beta0 in (0, 1/2)")
    return WeightFunction(
        breaks=(beta0, 1.0 - beta0),
        coeffs=((-0.5 * scale, scale),),
        at_breaks=(0.0, 0.0),
        form={"kind": "scaled_linear", "scale": scale, "beta0": beta0},
    )


def antisymmetric_count(beta: float) -> WeightFunction:
    """Indicator of (beta, 1/2) minus indicator of (1/2, 1 - beta)."""
    if not 0.0 < beta < 0.5:
        raise ValueError("need beta in (0, 1/2)")
    return WeightFunction(
        breaks=(beta, 0.5, 1.0 - beta),
        coeffs=((1.0, 0.0), (-1.0, 0.0)),
        at_breaks=(0.0, 0.0, 0.0),
        form={"kind": "antisymmetric_count", "beta": beta},
    )


def table(xs, ys) -> WeightFunction:
    """Continuous piecewise-linear interpolant through the given nodes."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
        raise ValueError("need equal-length 1D node arrays with at least 2 nodes")
    coeffs = []
    for i in range(len(xs) - 1):
        slope = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
        coeffs.append((ys[i] - slope * xs[i], slope))
    return WeightFunction(
        breaks=tuple(xs),
        coeffs=tuple(coeffs),
        at_breaks=tuple(ys),
        form={"kind": "table", "xs": xs.tolist(), "ys": ys.tolist()},
    )


def zero_function() -> WeightFunction:
    return WeightFunction(
        breaks=(0.0, 1.0), coeffs=((0.0, 0.0),), at_breaks=(0.0, 0.0), form={"kind": "zero"}
    )


@dataclass(frozen=True)
class Weights:
    """Weight vector of a black-and-white configuration-count estimator."""

    q: int
    w: tuple
    homogeneous: bool = True

    def __post_init__(self):
        arr = np.asarray(self.w, dtype=float)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ValueError("weights must be a finite 1D vector")
        size = len(arr)
        if size & (size - 1) or size < 2:
            raise ValueError("weight vector length must be a power of two (one per configuration)")
        object.__setattr__(self, "w", tuple(float(v) for v in arr))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.w)

    def to_dict(self) -> dict:
        return {"q": self.q, "w": list(self.w), "homogeneous": self.homogeneous}

    @staticmethod
    def from_dict(d: dict) -> "Weights":
        return Weights(q=int(d["q"]), w=tuple(d["w"]), homogeneous=bool(d.get("homogeneous", True)))
