"""Command line entry point: ``vessel-empc {plan,run,sweep,validate}``."""

import argparse
import csv
import json
import sys
from pathlib import Path

from . import harness
from .errors import ParseError, ScenarioValidationError, VesselEmpcError


def _parse_kec(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty k_ec list")
    return vals


def _parser():
    ap = argparse.ArgumentParser(prog="vessel-empc", description="Receding-horizon economic MPC for a surface vessel.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, text in (("plan", "global stage only: roadmap, smoothing and reference"),
                       ("run", "closed-loop simulation"),
                       ("sweep", "one closed-loop run per k_ec value"),
                       ("validate", "check a scenario file")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("--scenario", required=True, help="scenario YAML file, or 'benchmark' / 'ambush'")
        if verb != "validate":
            p.add_argument("--out", default="out", help="output directory")
            p.add_argument("--seed", type=int, default=None, help="stored in the scenario; the pipeline is deterministic")
        if verb in ("run", "sweep"):
            p.add_argument("--timeout", type=float, default=None, help="simulated seconds before giving up")
        if verb == "run":
            p.add_argument("--kec", type=float, default=None, help="economic weight override")
        if verb == "sweep":
            p.add_argument("--kec", type=_parse_kec, default=[0.0, 0.3, 0.6], help="comma separated k_ec values")
    return ap


def _load(arg):
    path = Path(arg)
    if not path.exists() and arg in ("benchmark", "ambush"):
        path = harness.bundled_scenario(arg)
    return harness.load_scenario(path)


def _plan(sc, out):
    out.mkdir(parents=True, exist_ok=True)
    gp = harness.plan_global(sc)
    with open(out / "roadmap.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x0", "y0", "x1", "y1", "length", "clearance"))
        for row in gp.graph.to_csv_rows():
            w.writerow([repr(float(v)) for v in row])
    with open(out / "waypoints.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x", "y"))
        for p in gp.waypoints:
            w.writerow([repr(float(v)) for v in p])
    with open(out / "control_points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("curve", "index", "x", "y"))
        for k, c in enumerate(gp.path.curves):
            for i, p in enumerate(c.points):
                w.writerow([k, i, repr(float(p[0])), repr(float(p[1]))])
    gp.reference.to_csv(out / "reference.csv")
    env = sc.build_environment()
    svg = harness._Svg(env.bounds, 400.0)
    for o in env.obstacles:
        svg.circle(o.center, o.radius + env.margin, "inflation", "#f3d3d3")
        svg.circle(o.center, max(o.radius, 0.05), "obstacle", "#b22222")
    V = gp.graph.vertices
    for e in gp.graph.edges:
        svg.polyline([V[e.i], V[e.j]], "roadmap", "#999999", 0.5)
    svg.polyline(gp.waypoints, "waypoints", "#000000", 0.8)
    svg.polyline(gp.path.sample(50), "path", "#1f4e99", 1.5)
    svg.write(out / "plan.svg")
    return 0


def _print_summary(log):
    tot = log.totals()
    print(f"{log.name}: {log.status.upper()} k_ec={log.k_ec} energy={tot['energy']:.2f} J "
          f"duration={tot['duration']:.1f} s rms_tracking={tot['rms_tracking']:.4f} m "
          f"min_margin={tot['min_margin']:.3f} m")


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        sc = _load(args.scenario)
        if getattr(args, "seed", None) is not None:
            sc = sc.model_copy(update={"seed": args.seed})
    except (ParseError, ScenarioValidationError, FileNotFoundError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return harness.EXIT_INVALID
    if args.verb == "validate":
        print(f"{args.scenario}: ok ({len(sc.environment.obstacles)} obstacles)")
        return 0
    out = Path(args.out)
    try:
        if args.verb == "plan":
            return _plan(sc, out)
        if args.verb == "run":
            if args.kec is not None:
                sc = sc.with_kec(args.kec)
            log = harness.run(sc, args.timeout)
            harness.export(log, out, sc.build_environment())
            _print_summary(log)
            return log.exit_code
        rows, logs = harness.sweep_kec(sc, args.kec, args.timeout)
        out.mkdir(parents=True, exist_ok=True)
        env = sc.build_environment()
        for v, log in zip(args.kec, logs):
            harness.export(log, out / f"kec_{v:g}", env)
            _print_summary(log)
        harness.write_sweep_table(rows, out / "sweep.csv")
        with open(out / "sweep.json", "w") as fh:
            json.dump(rows, fh, indent=2)
        codes = [log.exit_code for log in logs]
        return max(codes) if codes else 0
    except VesselEmpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return harness.EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
