"""Configuration-driven design-based studies: render, estimate, aggregate, predict.

A study fixes a phantom, a PSF and an estimator, then sweeps lattice spacings
and random lattice offsets, reporting empirical means with standard errors
next to the exact asymptotic predictions.  Offset streams are counter-based
(master seed + resolution/offset indices), so results are reproducible and
independent of the thread count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import theory
from .errors import ConfigError, IncompatibilityError
from .estimator import (
    ConfigurationScheme,
    bw_estimate,
    count_configurations,
    grey_estimate,
    make_mean_curvature_estimator,
    make_surface_estimator,
)
from .imaging import default_window, midpoint_binary, render, threshold
from .lattice import Lattice
from .phantom import Ball, Phantom, intensity_evaluator, phantom_from_descriptor
from .psf import (
    BallIndicator,
    BoxIndicator,
    Bump,
    Gaussian,
    Psf,
    TabulatedRadial,
)
from .weights import WeightFunction, Weights

__all__ = [
    "StudyConfig",
    "StudyReport",
    "ReportRow",
    "run_study",
    "predict",
    "sweep_beta",
    "sample_offsets",
    "psf_from_descriptor",
    "richardson_limits",
]

_VERSION = "greyvol-0.1.0"


def psf_from_descriptor(desc: dict) -> Psf:
    kind = desc.get("variant")
    if kind == "ball_indicator":
        return BallIndicator(R=float(desc["R"]), d=int(desc["d"]))
    if kind == "box_indicator":
        return BoxIndicator(half_widths=tuple(desc["half_widths"]))
    if kind == "gaussian":
        return Gaussian(sigma=float(desc["sigma"]), d=int(desc["d"]))
    if kind == "bump":
        return Bump(R=float(desc["R"]), d=int(desc["d"]))
    if kind == "tabulated_radial":
        return TabulatedRadial(
            radii=np.asarray(desc["radii"], dtype=float),
            values=np.asarray(desc["values"], dtype=float),
            d=int(desc["d"]),
        )
    raise ConfigError(f"unknown psf variant {kind!r}")


# ---------------------------------------------------------------------------
# offset sampling designs


def _balanced_grid_shape(n: int, d: int) -> Optional[tuple]:
    """Factor n into d grid sizes as evenly as possible; None if hopeless."""
    best = None

    def search(remaining: int, parts: tuple):
        nonlocal best
        if len(parts) == d:
            if remaining == 1:
                shape = tuple(sorted(parts, reverse=True))
                spread = shape[0] / shape[-1]
                if best is None or spread < best[0]:
                    best = (spread, shape)
            return
        for g in range(1, remaining + 1):
            if remaining % g == 0:
                search(remaining // g, parts + (g,))

    search(n, ())
    if best is None or best[1][-1] == 0:
        return None
    return best[1]


def sample_offsets(n: int, d: int, rng: np.random.Generator, sampler: str = "iid") -> np.ndarray:
    """n points of the unit cell [0, 1)^d under the chosen design.

    "iid": independent uniforms (the plain design-based model).
    "systematic": a uniform grid with one common uniform jitter -- the
        classical systematic uniform random design; unbiased for the
        design-based mean with far smaller fluctuation for thin-shell
        integrands.
    "qmc": scrambled Halton points (unbiased, low-discrepancy, any n).
    """
    if sampler == "iid":
        return rng.random((n, d))
    if sampler == "systematic":
        shape = _balanced_grid_shape(n, d)
        if shape is None or shape[0] > 16 * shape[-1]:
            return sample_offsets(n, d, rng, "qmc")
        axes = [np.arange(g) / g for g in shape]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        jitter = rng.random(d) / np.asarray(shape, dtype=float)
        return (mesh + jitter) % 1.0
    if sampler == "qmc":
        from scipy.stats import qmc as _qmc

        engine = _qmc.Halton(d=d, scramble=True, seed=rng)
        return engine.random(n)
    raise ConfigError(f"unknown offset sampler {sampler!r}")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class StudyConfig:
    phantom: dict
    psf: dict
    estimator: dict
    resolutions: tuple
    offsets: int
    seed: int = 20260810
    sampler: str = "systematic"
    threads: int = 1

    def __post_init__(self):
        res = tuple(float(a) for a in self.resolutions)
        if not res or any(a <= 0 for a in res):
            raise ConfigError("resolutions must be positive spacings")
        if any(b >= a for a, b in zip(res, res[1:])):
            raise ConfigError("resolutions must be strictly decreasing")
        if self.offsets < 1:
            raise ConfigError("need at least one offset per resolution")
        if self.sampler not in ("iid", "systematic", "qmc"):
            raise ConfigError(f"unknown offset sampler {self.sampler!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        object.__setattr__(self, "resolutions", res)

    @staticmethod
    def from_dict(d: dict) -> "StudyConfig":
        try:
            return StudyConfig(
                phantom=d["phantom"],
                psf=d["psf"],
                estimator=d["estimator"],
                resolutions=tuple(d["resolutions"]),
                offsets=int(d["offsets"]),
                seed=int(d.get("seed", 20260810)),
                sampler=d.get("sampler", "systematic"),
                threads=int(d.get("threads", 1)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "phantom": self.phantom,
            "psf": self.psf,
            "estimator": self.estimator,
            "resolutions": list(self.resolutions),
            "offsets": self.offsets,
            "seed": self.seed,
            "sampler": self.sampler,
            "threads": self.threads,
        }


@dataclass
class ResolvedEstimator:
    """Estimator spec bound to a concrete PSF, ready to evaluate on images."""

    kind: str  # "grey" | "thresholded" | "midpoint"
    q: int
    f: Optional[WeightFunction] = None
    scale: float = 1.0
    weights: Optional[Weights] = None
    beta: Optional[float] = None
    descriptor: dict = field(default_factory=dict)

    @property
    def cell_n(self) -> int:
        return 2 if self.kind in ("thresholded", "midpoint") else 1

    def evaluate(self, image=None, phantom=None) -> float:
        if self.kind == "grey":
            return self.scale * grey_estimate(image, self.f, self.q)
        scheme = ConfigurationScheme(d=image.lattice.d if image is not None else phantom.d)
        if self.kind == "thresholded":
            counts = count_configurations(threshold(image, self.beta), scheme)
            return bw_estimate(counts, self.weights, image.spacing)
        raise IncompatibilityError(f"estimator kind {self.kind} needs the midpoint pipeline")

    def evaluate_midpoint(self, phantom: Phantom, lattice: Lattice, window) -> float:
        scheme = ConfigurationScheme(d=phantom.d)
        counts = count_configurations(midpoint_binary(phantom, lattice, window), scheme)
        return bw_estimate(counts, self.weights, lattice.spacing)


def resolve_estimator(spec: dict, psf: Psf) -> ResolvedEstimator:
    """Build the concrete estimator, checking PSF compatibility up front."""
    kind = spec.get("kind")
    if kind == "surface":
        beta = float(spec["beta"])
        omega = float(spec.get("omega", 1.0 - beta))
        f, scale = make_surface_estimator(psf, beta, omega)
        return ResolvedEstimator(
            kind="grey",
            q=psf.d - 1,
            f=f,
            scale=scale * float(spec.get("extra_scale", 1.0)),
            descriptor={"kind": "surface", "beta": beta, "omega": omega, "scale": scale},
        )
    if kind == "mean_curvature":
        variant = spec.get("variant", "linear")
        f, scale = make_mean_curvature_estimator(psf, variant)
        return ResolvedEstimator(
            kind="grey",
            q=psf.d - 2,
            f=f,
            scale=scale,
            descriptor={
                "kind": "mean_curvature",
                "variant": variant,
                "beta0": f.form.get("beta0", f.form.get("beta")),
                "scale": scale,
            },
        )
    if kind == "grey":
        f = WeightFunction.from_dict(spec["weight_function"])
        scale = float(spec.get("scale", 1.0))
        q = int(spec["q"])
        if not psf.compact and f.support[0] <= 0.0:
            raise IncompatibilityError(
                "non-compact PSF requires the weight function to vanish near grey value 0"
            )
        return ResolvedEstimator(
            kind="grey", q=q, f=f, scale=scale, descriptor={"kind": "grey", "q": q, "scale": scale}
        )
    if kind == "bw":
        weights = Weights.from_dict({"q": spec["q"], "w": spec["weights"]})
        thr = spec.get("threshold", "midpoint")
        if thr == "midpoint":
            return ResolvedEstimator(
                kind="midpoint", q=weights.q, weights=weights, descriptor={"kind": "bw", "threshold": "midpoint"}
            )
        return ResolvedEstimator(
            kind="thresholded",
            q=weights.q,
            weights=weights,
            beta=float(thr),
            descriptor={"kind": "bw", "threshold": float(thr)},
        )
    raise ConfigError(f"unknown estimator kind {kind!r}")


# ---------------------------------------------------------------------------
# running


@dataclass
class ReportRow:
    a: float
    mean: float
    se: float
    reference: Optional[float]
    pred_first_order: Optional[float]
    pred_second_order: Optional[float]
    rel_bias: Optional[float]


@dataclass
class StudyReport:
    rows: list
    config: StudyConfig
    estimator_descriptor: dict
    intensity_path: Optional[str] = None

    def to_csv(self) -> str:
        lines = ["a,mean,se,reference,pred_first_order,pred_second_order,rel_bias"]
        for r in self.rows:
            cells = [
                repr(float(r.a)),
                repr(float(r.mean)),
                repr(float(r.se)),
                "" if r.reference is None else repr(float(r.reference)),
                "" if r.pred_first_order is None else repr(float(r.pred_first_order)),
                "" if r.pred_second_order is None else repr(float(r.pred_second_order)),
                "" if r.rel_bias is None else repr(float(r.rel_bias)),
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def metadata(self) -> dict:
        return {
            "version": _VERSION,
            "config": self.config.to_dict(),
            "estimator": self.estimator_descriptor,
            "intensity_path": self.intensity_path,
        }

    def to_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True, indent=2) + "\n"


def _estimates_for_resolution(
    phantom: Phantom,
    psf: Psf,
    est: ResolvedEstimator,
    a: float,
    offsets: np.ndarray,
    threads: int,
) -> np.ndarray:
    window = default_window(phantom, psf, a, cell_n=est.cell_n)
    values = np.empty(len(offsets))

    if est.kind == "midpoint":
        def job(j: int) -> None:
            c = a * offsets[j]
            lat = Lattice(d=phantom.d, spacing=a, offset=tuple(c))
            values[j] = est.evaluate_midpoint(phantom, lat, window)
    else:
        evaluator = intensity_evaluator(phantom, psf, a)

        def job(j: int) -> None:
            c = a * offsets[j]
            img = render(phantom, psf, a, c, window, cell_n=est.cell_n, evaluator=evaluator)
            values[j] = est.evaluate(image=img)

    if threads <= 1:
        for j in range(len(offsets)):
            job(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(job, range(len(offsets))))
    return values


def run_study(config: StudyConfig) -> StudyReport:
    """Monte Carlo design-based study; deterministic given the master seed."""
    phantom = phantom_from_descriptor(config.phantom)
    psf = psf_from_descriptor(config.psf)
    if phantom.d != psf.d:
        raise IncompatibilityError("phantom and psf dimensions differ")
    est = resolve_estimator(config.estimator, psf)

    predictions = {row["a"]: row for row in predict(config)}
    try:
        reference = phantom.intrinsic_volume(est.q)
    except IncompatibilityError:
        reference = None

    rows = []
    path = None
    for ri, a in enumerate(config.resolutions):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=(ri,))))
        offsets = sample_offsets(config.offsets, phantom.d, rng, config.sampler)
        values = _estimates_for_resolution(phantom, psf, est, a, offsets, config.threads)
        if path is None and est.kind != "midpoint":
            path = intensity_evaluator(phantom, psf, a)[0]
        mean = float(np.mean(values))
        se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        pred = predictions.get(a, {})
        rows.append(
            ReportRow(
                a=a,
                mean=mean,
                se=se,
                reference=reference,
                pred_first_order=pred.get("first_order"),
                pred_second_order=pred.get("second_order"),
                rel_bias=None if reference in (None, 0.0) else mean / reference - 1.0,
            )
        )
    return StudyReport(rows=rows, config=config, estimator_descriptor=est.descriptor, intensity_path=path)


def predict(config: StudyConfig) -> list:
    """Per-resolution asymptotic predictions with the applied formula named.

    Rows carry "first_order" (the a-independent limit of the estimator mean
    plus nothing else) and, when the second-order machinery applies,
    "second_order" (limit plus the next term at that spacing).
    """
    phantom = phantom_from_descriptor(config.phantom)
    psf = psf_from_descriptor(config.psf)
    est = resolve_estimator(config.estimator, psf)

    rows = []
    if est.kind == "grey":
        f_scaled = est.f.scaled(est.scale)
        try:
            measure = phantom.surface_measure()
        except IncompatibilityError:
            measure = None
        if measure is None:
            for a in config.resolutions:
                rows.append({"a": a, "formula": "no prediction", "first_order": None, "second_order": None})
            return rows
        limit = theory.first_order_mean(measure, psf, f_scaled)
        second = None
        formula = "first-order boundary integral"
        if isinstance(phantom, Ball) and psf.rotation_invariant:
            import warnings as _warnings

            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore", RuntimeWarning)
                pred = theory.second_order_mean_sphere(psf, f_scaled, phantom.R, phantom.d)
            if pred.order2 is not None:
                second = pred
                formula = "second-order sphere expansion"
        for a in config.resolutions:
            first = a ** (est.q - phantom.d + 1) * limit if est.q != phantom.d - 1 else limit
            row = {"a": a, "formula": formula, "first_order": first, "second_order": None}
            if second is not None:
                row["second_order"] = second.mean(a, est.q)
            rows.append(row)
        return rows

    # BW / thresholded estimators: first-order limit for q = d-1
    try:
        measure = phantom.surface_measure()
    except IncompatibilityError:
        measure = None
    if measure is None or est.q != phantom.d - 1 or est.weights is None:
        return [
            {"a": a, "formula": "no prediction", "first_order": None, "second_order": None}
            for a in config.resolutions
        ]
    scheme = ConfigurationScheme(d=phantom.d)
    try:
        limit = theory.bw_first_order_mean(measure, scheme, est.weights)
    except IncompatibilityError:
        return [
            {"a": a, "formula": "no prediction", "first_order": None, "second_order": None}
            for a in config.resolutions
        ]
    return [
        {"a": a, "formula": "configuration-count first-order limit", "first_order": limit, "second_order": None}
        for a in config.resolutions
    ]


def sweep_beta(config: StudyConfig, betas) -> dict:
    """Repeat the study varying the estimator's beta with shared offset streams.

    Images are rendered once per (resolution, offset) and every beta variant
    is evaluated on them, which both pairs the randomness across betas and
    avoids redundant rendering.
    """
    phantom = phantom_from_descriptor(config.phantom)
    psf = psf_from_descriptor(config.psf)
    base_kind = config.estimator.get("kind")
    if base_kind not in ("surface", "bw"):
        raise ConfigError("sweep requires a beta-parametrized estimator (surface or thresholded bw)")

    variants = {}
    for beta in betas:
        spec = dict(config.estimator)
        if base_kind == "surface":
            spec["beta"] = float(beta)
            spec.pop("omega", None)
        else:
            spec["threshold"] = float(beta)
        variants[float(beta)] = resolve_estimator(spec, psf)

    reports = {b: [] for b in variants}
    for ri, a in enumerate(config.resolutions):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=(ri,))))
        offsets = sample_offsets(config.offsets, phantom.d, rng, config.sampler)
        cell_n = max(v.cell_n for v in variants.values())
        window = default_window(phantom, psf, a, cell_n=cell_n)
        evaluator = intensity_evaluator(phantom, psf, a)
        per_beta = {b: np.empty(len(offsets)) for b in variants}
        for j, off in enumerate(offsets):
            img = render(phantom, psf, a, a * off, window, cell_n=cell_n, evaluator=evaluator)
            for b, v in variants.items():
                per_beta[b][j] = v.evaluate(image=img)
        for b, vals in per_beta.items():
            est = variants[b]
            try:
                reference = phantom.intrinsic_volume(est.q)
            except IncompatibilityError:
                reference = None
            mean = float(np.mean(vals))
            reports[b].append(
                ReportRow(
                    a=a,
                    mean=mean,
                    se=float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                    reference=reference,
                    pred_first_order=None,
                    pred_second_order=None,
                    rel_bias=None if reference in (None, 0.0) else mean / reference - 1.0,
                )
            )
    return {
        b: StudyReport(rows=rows, config=config, estimator_descriptor=variants[b].descriptor)
        for b, rows in reports.items()
    }


def richardson_limits(a_values, means) -> list:
    """First-order Richardson extrapolants from consecutive resolution pairs."""
    out = []
    for (a1, x1), (a2, x2) in zip(zip(a_values, means), zip(a_values[1:], means[1:])):
        out.append((a1 * x2 - a2 * x1) / (a1 - a2))
    return out
