"""sympfold command line: dim, displace, fold, squeeze, verify.

Exit codes: 0 ok, 2 bad input, 3 insufficient data, 4 no displacing
direction, 5 certification failure.
"""
import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import figures
from .displacement import (DisplacementProblem, DisplacementResult, displace_certify,
                           find_generic_direction)
from .errors import (BadAreas, CertificationFailed, DomainViolation, EmptySet, InsufficientScales,
                     MaskRejectionExhausted, NoDirectionFound, SerializationError, SympfoldError)
from .folding import (FoldConfig, FoldProblem, SqueezeConfig, fold_once, full_box, inside_box,
                      squeeze)
from .hausdorff import box_dimension
from .sets import load_set, set_from_dict
from .sympmap import (CheckReport, MapExpr, PiecewiseGlue, check_injective, check_symplectic,
                      glue_check)

log = logging.getLogger("sympfold")

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_SEARCH, EXIT_CERT = 0, 2, 3, 4, 5


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_report(report, path):
    text = json.dumps(jsonable(report), sort_keys=True, indent=1) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def floats(text, count=None, name="value"):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{name}: {exc}") from exc
    if count is not None and len(vals) != count:
        raise argparse.ArgumentTypeError(f"{name}: expected {count} numbers, got {len(vals)}")
    return vals


def box_arg(text, name):
    """'lo1,hi1,lo2,hi2,...' -> (lo, hi)."""
    vals = floats(text or "", name=name)
    if len(vals) % 2:
        raise argparse.ArgumentTypeError(f"{name}: need lo,hi pairs")
    v = np.asarray(vals).reshape(-1, 2)
    if np.any(v[:, 0] > v[:, 1]):
        raise argparse.ArgumentTypeError(f"{name}: lo > hi")
    return v[:, 0], v[:, 1]


def svg_path(args, stem):
    if args.no_figures:
        return None
    base = args.figures or (os.path.dirname(args.out) if args.out not in (None, "-") else ".")
    os.makedirs(base or ".", exist_ok=True)
    return os.path.join(base or ".", stem + ".svg")


def _check_dicts(checks):
    return {k: v.to_dict() for k, v in sorted(checks.items())}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_dim(args):
    s = load_set(args.set)
    scales = floats(args.scales, name="--scales") if args.scales else None
    est = box_dimension(s, scales, seed=args.seed, samples=args.samples)
    report = {"kind": "dimension", "set": s.to_dict(), "seed": args.seed, "samples": args.samples,
              "estimate": est.to_dict()}
    write_report(report, args.out)
    path = svg_path(args, "dimension")
    if path:
        figures.dimension_plot(est, path)
    return EXIT_OK


def cmd_displace(args):
    a = load_set(args.a)
    b = load_set(args.b) if args.b else a
    problem = DisplacementProblem(a, b, args.samples, args.samples, seed=args.seed)
    res = find_generic_direction(problem, args.directions, (0.0, args.t_max), args.t_samples)
    certs = []
    times = res.admissible_times
    if times:
        picks = sorted({times[int(round(k * (len(times) - 1) / 4))] for k in range(5)})
        certs = [displace_certify(problem, res, t, factor=args.cert_factor) for t in picks]
    report = {"kind": "displacement", "A": a.to_dict(), "B": b.to_dict(), "seed": args.seed,
              "samples": args.samples, "cert_factor": args.cert_factor,
              "result": res.to_dict(), "certificates": [c.to_dict() for c in certs]}
    write_report(report, args.out)
    path = svg_path(args, "displacement")
    if path and problem.dim == 2 and certs:
        figures.displacement_plot(problem.a_points, problem.b_points, res.v0, certs[-1].t, path)
    return EXIT_OK


def _fold_config(args, **kw):
    cfg = FoldConfig(**kw)
    if getattr(args, "cert_size", None):
        cfg.cert_size = args.cert_size
    return cfg


def cmd_fold(args):
    A = load_set(args.set)
    Q = floats(args.Q, 4, "--Q")
    R = floats(args.R, 4, "--R")
    K = box_arg(args.K, "--K") if args.K else None
    U = box_arg(args.U, "--U") if args.U else None
    cfg = _fold_config(args)
    rep = fold_once(FoldProblem(A, Q, R, K, U, seed=args.seed), cfg)
    report = rep.to_dict()
    report.update({"set": A.to_dict(), "config": cfg.to_dict(), "seed": args.seed})
    write_report(report, args.out)
    path = svg_path(args, "fold")
    if path:
        figures.fold_stages(rep.snapshots, path, R, rep.parameters.scale)
    return EXIT_OK


def cmd_squeeze(args):
    A = load_set(args.set)
    try:
        with open(args.targets) as fh:
            targets = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SerializationError(f"{args.targets}: {exc}") from exc
    if isinstance(targets, dict):
        targets = targets["targets"]
    cfg = SqueezeConfig()
    if args.cert_size:
        cfg.fold.cert_size = args.cert_size
    rep = squeeze(A, targets, cfg, seed=args.seed)
    report = rep.to_dict()
    report.update({"set": A.to_dict(), "config": cfg.to_dict(), "seed": args.seed})
    write_report(report, args.out)
    for snap, fold in zip(rep.snapshots, rep.folds):
        path = svg_path(args, f"squeeze_f{snap['factor']}_{snap['iteration']:02d}")
        if path:
            figures.fold_stages(snap, path, fold["R"], fold["parameters"]["scale"])
    return EXIT_OK


# --------------------------------------------------------------------------
# verify
# --------------------------------------------------------------------------


def verify_report(report, seed, points=20_000):
    """Re-run the certifications of a stored report on fresh clouds; dict of CheckReports."""
    kind = report.get("kind")
    if kind in ("fold", "squeeze"):
        return _verify_map(report, seed, points)
    if kind == "displacement":
        return _verify_displacement(report, seed)
    if kind == "dimension":
        return _verify_dimension(report, seed)
    raise SerializationError(f"unknown report kind {kind!r}")


def _verify_map(report, seed, points):
    A = set_from_dict(report["set"])
    cfg = report.get("config", {})
    fc = cfg.get("fold", cfg)
    try:
        fmap = MapExpr.from_dict(report["map"])
    except ValueError as exc:
        return {"map": CheckReport("map", False, float("nan"), 0.0, {"error": str(exc)})}
    sym_tol = fc.get("sym_tol", 1e-6)
    sep = fc.get("min_preimage_sep", 1e-4)
    rtol = fc.get("clearance_rtol", 1e-6)
    if A.is_empty:
        return {"empty": CheckReport("empty", True, 0.0, 0.0, {"vacuous": True})}
    X = A.sample(points, seed).points
    checks = {"symplecticity": check_symplectic(fmap, X[:10_000], sym_tol)}
    Y = fmap(X)
    if report["kind"] == "fold":
        prob = report["problem"]
        Ulo, Uhi = np.asarray(prob["U"][0], dtype=float), np.asarray(prob["U"][1], dtype=float)
        lo, hi = full_box(prob["R"], (Ulo, Uhi))
        margin = rtol * (max(1.0, float(np.max(Uhi - Ulo))) if len(Ulo) else 1.0)
    else:
        T = report["targets"]
        lo = np.concatenate([[r[0], r[2]] for r in T])
        hi = np.concatenate([[r[1], r[3]] for r in T])
        margin = rtol
    ok = inside_box(Y, lo, hi, margin)
    checks["containment"] = CheckReport("containment", bool(ok.all()), float(ok.mean()), 1.0,
                                        {"points": len(Y)})
    checks["injectivity"] = check_injective(fmap, X, sep, images=Y)
    rng = np.random.default_rng(seed)
    for k, node in enumerate(n for n in fmap.walk() if isinstance(n, PiecewiseGlue)):
        band = node.band.sample(fc.get("glue_points", 1000), rng)
        checks[f"glue_{k}"] = glue_check(node, band, fc.get("glue_tol", 1e-8))
    return checks


def _verify_displacement(report, seed):
    A, B = set_from_dict(report["A"]), set_from_dict(report["B"])
    res = report["result"]
    result = DisplacementResult(np.asarray(res["v0"]), clearance_tol=res["clearance_tol"])
    problem = DisplacementProblem(A, B, report["samples"], report["samples"], seed=seed)
    checks = {}
    for k, c in enumerate(report["certificates"]):
        cert = displace_certify(problem, result, c["t"], report["cert_factor"], raise_on_fail=False)
        checks[f"t_{k}"] = CheckReport(f"t_{k}", cert.passed, cert.distance, cert.tol,
                                       {"t": cert.t, "resolution": cert.resolution})
    return checks


def _verify_dimension(report, seed):
    s = set_from_dict(report["set"])
    est = report["estimate"]
    new = box_dimension(s, est["scales"], seed=seed, samples=report["samples"])
    tol = max(0.05, 3 * est["ci"])
    diff = abs(new.slope - est["slope"])
    return {"slope": CheckReport("slope", diff <= tol, diff, tol, {"slope": new.slope})}


def cmd_verify(args):
    try:
        with open(args.report) as fh:
            report = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SerializationError(f"{args.report}: {exc}") from exc
    checks = verify_report(report, args.seed, args.points)
    failed = [k for k, c in checks.items() if not c.passed]
    out = {"kind": "verification", "report": os.path.basename(args.report), "seed": args.seed,
           "passed": not failed, "checks": _check_dicts(checks), "failed": failed}
    write_report(out, args.out)
    if failed:
        log.error("verification failed: %s", ", ".join(failed))
        return EXIT_CERT
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sympfold", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="-"):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=out_default, help="report path ('-' for stdout)")
        sp.add_argument("--figures", default=None, help="directory for SVG figures")
        sp.add_argument("--no-figures", action="store_true")

    sp = sub.add_parser("dim", help="box-counting dimension of a set")
    sp.add_argument("--set", required=True)
    sp.add_argument("--scales", default=None, help="comma separated grid sides")
    sp.add_argument("--samples", type=int, default=100_000)
    common(sp)
    sp.set_defaults(func=cmd_dim)

    sp = sub.add_parser("displace", help="generic linear displacement of A off B")
    sp.add_argument("--set-a", "--a", dest="a", required=True)
    sp.add_argument("--set-b", "--b", dest="b", default=None, help="defaults to A")
    sp.add_argument("--samples", type=int, default=500)
    sp.add_argument("--directions", type=int, default=64)
    sp.add_argument("--t-max", type=float, default=1.0)
    sp.add_argument("--t-samples", type=int, default=1000)
    sp.add_argument("--cert-factor", type=int, default=10)
    common(sp)
    sp.set_defaults(func=cmd_displace)

    sp = sub.add_parser("fold", help="fold a set into a rectangle of just over half the area")
    sp.add_argument("--set", required=True)
    sp.add_argument("--Q", required=True, help="q0,q1,p0,p1")
    sp.add_argument("--R", required=True, help="q0,q1,p0,p1")
    sp.add_argument("--K", default=None, help="lo,hi pairs for the other coordinates")
    sp.add_argument("--U", default=None, help="lo,hi pairs, an open box around K")
    sp.add_argument("--cert-size", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_fold)

    sp = sub.add_parser("squeeze", help="squeeze a set into a product of rectangles")
    sp.add_argument("--set", required=True)
    sp.add_argument("--targets", required=True, help="JSON list of q0,q1,p0,p1 rectangles")
    sp.add_argument("--cert-size", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_squeeze)

    sp = sub.add_parser("verify", help="re-run the certificates of a report on fresh samples")
    sp.add_argument("--report", required=True)
    sp.add_argument("--points", type=int, default=20_000)
    common(sp)
    sp.set_defaults(func=cmd_verify, seed=1)
    return p


_EXIT = ((InsufficientScales, EXIT_DATA), (MaskRejectionExhausted, EXIT_DATA),
         (NoDirectionFound, EXIT_SEARCH), (CertificationFailed, EXIT_CERT),
         (BadAreas, EXIT_INPUT), (DomainViolation, EXIT_INPUT), (EmptySet, EXIT_INPUT),
         (SerializationError, EXIT_INPUT), (SympfoldError, EXIT_INPUT))


_BOX_FLAGS = ("--Q", "--R", "--K", "--U", "--scales")


def _join_box_values(argv):
    """Attach box values to their flag so "--U -0.1,1.1" parses like "--U=-0.1,1.1"."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _BOX_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    parser = build_parser()
    argv = _join_box_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SympfoldError as exc:
        code = next(c for cls, c in _EXIT if isinstance(exc, cls))
        stage = getattr(exc, "stage", None)
        msg = f"{type(exc).__name__}: {exc}"
        if stage:
            msg += f" [stage: {stage}, check: {getattr(exc, 'check', None)}]"
        if isinstance(exc, CertificationFailed) and getattr(exc, "check", None) == "displacement":
            msg += (" (the folded halves stay within sample resolution of each other;"
                    " a factor projection of positive area cannot be folded this way)")
        log.error(msg)
        return code
    except (OSError, KeyError, TypeError, ValueError, argparse.ArgumentTypeError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
