"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure.  Artifacts go to
the ``--out`` directory together with a ``summary.json`` for each run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import chow, fields, integrate, metrics, poincare
from .errors import InputError, NumericError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 1

# options whose value may start with a minus sign ("--point -1,0")
VALUE_OPTIONS = {"--point", "--from", "--to", "--center", "--via", "--radii", "--time", "--f0"}


def parse_point(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"cannot parse point {text!r}; expected comma-separated numbers") from None
    if not all(np.isfinite(vals)):
        raise InputError(f"point {text!r} has non-finite coordinates")
    return np.array(vals)


def load_geometry(spec: str) -> fields.Geometry:
    """A geometry JSON file, or a preset name when no such file exists."""
    if not os.path.exists(spec) and spec in fields.PRESETS:
        return fields.PRESETS[spec]()
    return fields.load_geometry(spec)


def _point_for(g, text, what="point"):
    p = parse_point(text)
    if p.size != g.dim:
        raise InputError(f"{what} has {p.size} coordinates, geometry has {g.dim}")
    return p


def _fmt(v) -> str:
    return "(" + ", ".join(f"{float(c):.12g}" for c in v) + ")"


class Run:
    """Collects summary entries and writes artifacts under the output directory."""

    def __init__(self, args):
        self.args = args
        self.out = args.out
        self.summary = {"command": args.command}
        self.artifacts = []

    def write(self, name, text):
        os.makedirs(self.out, exist_ok=True)
        path = os.path.join(self.out, name)
        with open(path, "w") as fh:
            fh.write(text)
        self.artifacts.append(name)
        return path

    def finish(self):
        self.summary["artifacts"] = self.artifacts
        self.write("summary.json", json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ------------------------------------------------------------- commands


def cmd_check(run, g, a):
    p = _point_for(g, a.point)
    gv = fields.growth_vector(g, p, a.depth, a.rank_tol)
    verdict = "yes" if gv.bracket_generating else "no"
    print(f"ranks: {tuple(gv.ranks)}")
    print(f"weights: {tuple(gv.weights)}")
    print("basis: " + ", ".join(str(B) for B in gv.brackets))
    print(f"bracket-generating: {verdict}")
    run.summary.update(
        point=p, ranks=list(gv.ranks), weights=list(gv.weights),
        basis=[str(B) for B in gv.brackets], bracket_generating=gv.bracket_generating,
    )


def cmd_bracket(run, g, a):
    B = fields.parse_bracket(a.expr)
    if max(B.leaves()) > g.k:
        raise InputError(f"bracket uses generator {max(B.leaves())} but the geometry has {g.k}")
    p = _point_for(g, a.point)
    v = fields.eval_bracket(g, B, p)
    field_text = "(" + ", ".join(g.bracket_field(B).text(g.coords)) + ")"
    print(f"{B} = {field_text}")
    print(f"{B}{_fmt(p)} = {_fmt(v)}")
    run.summary.update(bracket=str(B), point=p, value=v, field=field_text)


def cmd_verify_michor(run, g, a):
    B = fields.parse_bracket(a.expr)
    p = _point_for(g, a.point)
    rep = chow.michor_check(g, B, p, a.h, a.step)
    print(f"order: {rep.order}")
    print(f"low_order_max: {rep.low_order_max:.6g}")
    print(f"kth_estimate: {_fmt(rep.kth_estimate)}")
    print(f"reference: {_fmt(rep.reference)}")
    print(f"rel_err: {rep.rel_err:.6g}")
    if rep.cancellation:
        print("warning: stencil values cancel; estimates are rounding noise", file=sys.stderr)
    run.summary.update(
        bracket=str(B), point=p, order=rep.order, low_order_max=rep.low_order_max,
        kth_estimate=rep.kth_estimate, reference=rep.reference, rel_err=rep.rel_err,
        cancellation=bool(rep.cancellation),
    )


def cmd_flow(run, g, a):
    p = _point_for(g, a.point)
    t = float(a.time)
    q = integrate.flow(g, a.field, t, p, a.step)
    print(f"endpoint: {_fmt(q)}")
    run.summary.update(field=a.field, time=t, point=p, endpoint=q)


def cmd_integrate(run, g, a):
    u = integrate.load_control(a.control)
    p = _point_for(g, getattr(a, "from"))
    path = integrate.integrate_control(g, u, p, a.step)
    run.write("path.csv", path.to_csv())
    print(f"endpoint: {_fmt(path.endpoint)}")
    print(f"length: {path.length:.12g}")
    run.summary.update(start=p, endpoint=path.endpoint, length=path.length, segments=u.m)


def cmd_steer(run, g, a):
    x0 = _point_for(g, getattr(a, "from"), "start")
    y = _point_for(g, a.to, "target")
    plan = chow.steer_plan(g, x0, y, tol=a.tol, max_depth=a.depth, step=a.step)
    run.write("control.json", json.dumps(plan.control.to_json()) + "\n")
    run.write("path.csv", plan.path.to_csv())
    if a.trace:
        lines = [f"X{j} {t!r}" for j, t in plan.segments]
        run.write("trace.txt", "\n".join(lines) + ("\n" if lines else ""))
        for line in lines:
            print(line)
    print(f"endpoint: {_fmt(plan.path.endpoint)}")
    print(f"endpoint_error: {plan.residual:.3g}")
    print(f"length: {plan.path.length:.12g}")
    run.summary.update(
        start=x0, target=y, endpoint=plan.path.endpoint, endpoint_error=plan.residual,
        length=plan.path.length, tol=a.tol, segments=len(plan.segments),
    )


def cmd_distance(run, g, a):
    x0 = _point_for(g, getattr(a, "from"), "start")
    y = _point_for(g, a.to, "target")
    d, u = metrics.distance_upper(g, x0, y, refine=a.refine, tol=a.tol, step=a.step, max_depth=a.depth)
    run.write("control.json", json.dumps(u.to_json()) + "\n")
    print(f"distance_upper: {d:.12g}")
    run.summary.update(start=x0, target=y, distance_upper=d, refined=a.refine)


def cmd_ball(run, g, a):
    c = _point_for(g, a.center, "center")
    cloud = metrics.ball_sample(g, c, a.eps, a.samples, a.segments, a.seed, a.step)
    run.write("ball.csv", cloud.to_csv())
    print(f"samples: {len(cloud.lengths)}")
    print(f"resampled: {cloud.resampled}")
    run.summary.update(
        center=c, eps=a.eps, samples=a.samples, segments=a.segments, seed=a.seed,
        resampled=cloud.resampled, max_length=float(cloud.lengths.max()),
    )


def _direction(g, text):
    if text in g.coords:
        return g.coords.index(text)
    try:
        i = int(text)
    except ValueError:
        raise InputError(f"unknown direction {text!r}; use a coordinate name or 0-based index") from None
    if not 0 <= i < g.dim:
        raise InputError(f"direction index {i} out of range 0..{g.dim - 1}")
    return i


def cmd_exponent(run, g, a):
    p = _point_for(g, a.point)
    radii = parse_point(a.radii)
    i = _direction(g, a.direction)
    fit = metrics.boxfit_exponent(g, p, i, radii, refine=a.refine, tol=a.tol, step=a.step, max_depth=a.depth)
    run.write("exponent.csv", fit.to_csv())
    print(f"slope: {fit.slope:.6g}")
    for h, msg in fit.dropped:
        print(f"dropped radius {h:g}: {msg}", file=sys.stderr)
    run.summary.update(point=p, direction=g.coords[i], slope=fit.slope, dropped=[h for h, _ in fit.dropped])


def cmd_reconstruct(run, g, a):
    d = poincare.load_horizontal_derivatives(a.derivs, g)
    x0 = _point_for(g, getattr(a, "from"), "start")
    targets = [_point_for(g, t, "target") for t in a.to]
    vals = [poincare.reconstruct(d, x0, a.f0, t, tol=a.tol, step=a.step, max_depth=a.depth) for t in targets]
    run.write("reconstruct.csv", poincare.reconstruction_csv(targets, vals))
    for t, v in zip(targets, vals):
        print(f"f{_fmt(t)} = {v:.12g}")
    run.summary.update(start=x0, f0=a.f0, targets=targets, values=vals)


def cmd_loopcheck(run, g, a):
    d = poincare.load_horizontal_derivatives(a.derivs, g)
    x0 = _point_for(g, getattr(a, "from"), "start")
    y = _point_for(g, a.to, "target")
    rep = poincare.path_independence_check(d, x0, a.f0, y, a.trials, a.seed, tol=a.tol, step=a.step, max_depth=a.depth)
    print(f"routes: {len(rep.values)}")
    print(f"max_discrepancy: {rep.max_discrepancy:.6g}")
    run.summary.update(start=x0, target=y, values=rep.values, max_discrepancy=rep.max_discrepancy)


COMMANDS = {
    "check": cmd_check,
    "bracket": cmd_bracket,
    "verify-michor": cmd_verify_michor,
    "flow": cmd_flow,
    "integrate": cmd_integrate,
    "steer": cmd_steer,
    "distance": cmd_distance,
    "ball": cmd_ball,
    "exponent": cmd_exponent,
    "reconstruct": cmd_reconstruct,
    "loopcheck": cmd_loopcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--step", type=float, default=integrate.DEFAULT_STEP, help="integrator step")
    common.add_argument("--tol", type=float, default=1e-8, help="endpoint tolerance")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--depth", type=int, default=4, help="maximum bracket depth")
    common.add_argument("--out", default=".", help="artifact directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="subriemann", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("geometry", help="geometry JSON file or preset name")
        return p

    p = add("check", "growth vector and bracket-generating verdict")
    p.add_argument("--point", required=True)
    p.add_argument("--rank-tol", type=float, default=1e-9)

    p = add("bracket", "evaluate a formal bracket")
    p.add_argument("--expr", required=True, help="e.g. [1,[1,2]]")
    p.add_argument("--point", required=True)

    p = add("verify-michor", "derivative check of a bracket of flows")
    p.add_argument("--expr", required=True)
    p.add_argument("--point", required=True)
    p.add_argument("--h", type=float, default=1e-2)

    p = add("flow", "flow of one generator")
    p.add_argument("--field", type=int, required=True, help="1-based generator index")
    p.add_argument("--time", required=True)
    p.add_argument("--point", required=True)

    p = add("integrate", "integrate a control file")
    p.add_argument("--control", required=True)
    p.add_argument("--from", required=True)

    p = add("steer", "steer between two points")
    p.add_argument("--from", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--trace", action="store_true", help="list the elementary flow segments")

    p = add("distance", "upper bound for the CC distance")
    p.add_argument("--from", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--refine", action="store_true")

    p = add("ball", "sample a reachable cloud")
    p.add_argument("--center", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--segments", type=int, default=4)

    p = add("exponent", "Ball-Box log-log slope")
    p.add_argument("--point", required=True)
    p.add_argument("--direction", required=True, help="coordinate name or 0-based index")
    p.add_argument("--radii", default="1e-1,1e-2,1e-3,1e-4")
    p.add_argument("--refine", action="store_true")

    p = add("reconstruct", "reconstruct f from horizontal derivatives")
    p.add_argument("--derivs", required=True, help='JSON {"fields": [...]}')
    p.add_argument("--from", required=True)
    p.add_argument("--f0", type=float, default=0.0)
    p.add_argument("--to", required=True, action="append")

    p = add("loopcheck", "path-independence diagnostic")
    p.add_argument("--derivs", required=True)
    p.add_argument("--from", required=True)
    p.add_argument("--f0", type=float, default=0.0)
    p.add_argument("--to", required=True)
    p.add_argument("--trials", type=int, default=4)
    return parser


def _merge_negative_values(argv):
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if tok in VALUE_OPTIONS and nxt is not None and nxt.startswith("-") and len(nxt) > 1 and (nxt[1].isdigit() or nxt[1] == "."):
            out.append(f"{tok}={nxt}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_merge_negative_values(argv))
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.step <= 0 or args.tol <= 0 or args.depth < 1:
            raise InputError("--step and --tol must be positive and --depth at least 1")
        g = load_geometry(args.geometry)
        r = Run(args)
        r.summary["geometry"] = g.name or args.geometry
        COMMANDS[args.command](r, g, args)
        r.finish()
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # keep the promise of a diagnostic
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
