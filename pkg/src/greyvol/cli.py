"""Command-line interface: profile, constants, render, estimate, study, predict, sweep.

Exit codes: 0 success, 2 configuration/input error, 3 estimator/PSF
incompatibility, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import theory
from .errors import ConfigError, GreyvolError, IncompatibilityError, NumericalError, WindowError
from .estimator import make_mean_curvature_estimator
from .imaging import export_pgm, load_image, render, save_image, default_window
from .phantom import intensity_evaluator, phantom_from_descriptor
from .psf import phi
from .study import (
    StudyConfig,
    psf_from_descriptor,
    predict,
    resolve_estimator,
    run_study,
    sweep_beta,
)


def _load_json_arg(text: str) -> dict:
    try:
        if text.startswith("@"):
            with open(text[1:], "r", encoding="utf-8") as fh:
                return json.load(fh)
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse JSON argument: {exc}") from exc


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _merged_config(args) -> StudyConfig:
    data = _load_config(args.config) if args.config else {}
    for key in ("offsets", "seed", "threads", "sampler"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "resolutions", None):
        data["resolutions"] = [float(a) for a in args.resolutions.split(",")]
    return StudyConfig.from_dict(data)


def cmd_profile(args) -> int:
    psf = psf_from_descriptor(_load_json_arg(args.psf))
    n = np.asarray([float(v) for v in args.direction.split(",")])
    n = n / np.linalg.norm(n)
    lo, hi, count = (float(x) for x in args.t.split(":"))
    ts = np.linspace(lo, hi, int(count))
    vals = psf.profile(ts, n)
    print("t,theta")
    for t, v in zip(ts, vals):
        print(f"{t!r},{float(v)!r}")
    return 0


def cmd_constants(args) -> int:
    psf = psf_from_descriptor(_load_json_arg(args.psf))
    t0, beta0 = theory.find_beta0(psf, psf.d)
    f, scale = make_mean_curvature_estimator(psf, "linear")
    c1, c2, c3 = theory.constants_c123(psf, f, beta0, psf.d)
    out = {
        "phi_beta0": phi(psf, np.eye(psf.d)[0], beta0),
        "beta0": beta0,
        "c1": c1,
        "c2": c2,
        "c3": c3,
        "scale": scale,
    }
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    phantom = phantom_from_descriptor(_load_json_arg(args.phantom))
    psf = psf_from_descriptor(_load_json_arg(args.psf))
    a = float(args.a)
    c = np.asarray([float(v) for v in args.offset.split(",")]) if args.offset else np.zeros(phantom.d)
    window = default_window(phantom, psf, a)
    img = render(phantom, psf, a, c, window, evaluator=intensity_evaluator(phantom, psf, a))
    save_image(img, args.out)
    if args.export_pgm:
        export_pgm(img, args.export_pgm)
    print(f"wrote {args.out} ({img.values.size} pixels, path={img.provenance['intensity_path']})")
    return 0


def cmd_estimate(args) -> int:
    img = load_image(args.image)
    psf = psf_from_descriptor(img.provenance["psf"])
    est = resolve_estimator(_load_json_arg(args.estimator), psf)
    if est.kind == "midpoint":
        raise ConfigError("midpoint estimators need the phantom; use the study command")
    value = est.evaluate(image=img)
    print(repr(float(value)))
    return 0


def cmd_study(args) -> int:
    config = _merged_config(args)
    report = run_study(config)
    csv_text = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


def cmd_predict(args) -> int:
    config = _merged_config(args)
    rows = predict(config)
    print("a,formula,first_order,second_order")
    for r in rows:
        fo = "" if r["first_order"] is None else repr(float(r["first_order"]))
        so = "" if r.get("second_order") is None else repr(float(r["second_order"]))
        print(f"{r['a']!r},{r['formula']},{fo},{so}")
    return 0


def cmd_sweep(args) -> int:
    config = _merged_config(args)
    betas = [float(b) for b in args.betas.split(",")]
    reports = sweep_beta(config, betas)
    for beta, report in sorted(reports.items()):
        print(f"# beta = {beta}")
        sys.stdout.write(report.to_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greyvol", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="print a half-space intensity profile")
    p.add_argument("--psf", required=True, help="PSF descriptor JSON (or @file)")
    p.add_argument("--direction", required=True, help="comma-separated direction vector")
    p.add_argument("--t", default="-1:1:41", help="lo:hi:count sample range")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("constants", help="mean-curvature estimator constants for a PSF")
    p.add_argument("--psf", required=True)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("render", help="render one grey-scale image to a file")
    p.add_argument("--phantom", required=True)
    p.add_argument("--psf", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--offset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--export-pgm", default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("estimate", help="apply an estimator to a stored image")
    p.add_argument("--image", required=True)
    p.add_argument("--estimator", required=True)
    p.set_defaults(func=cmd_estimate)

    for name, fn in (("study", cmd_study), ("predict", cmd_predict), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} a configured experiment")
        p.add_argument("--config", default=None, help="JSON study config file")
        p.add_argument("--offsets", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--sampler", choices=("iid", "systematic", "qmc"), default=None)
        p.add_argument("--resolutions", default=None, help="comma-separated spacings")
        if name == "study":
            p.add_argument("--out", default=None, help="CSV output path (JSON sidecar alongside)")
        if name == "sweep":
            p.add_argument("--betas", required=True, help="comma-separated beta values")
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, WindowError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IncompatibilityError as exc:
        print(f"incompatible combination: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except GreyvolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
