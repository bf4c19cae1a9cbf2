"""Command-line front end.

Stages:

* ``smooth``: reference line CSV, continuity report, Bezier control points.
* ``plan``: one planning cycle's candidate set from the initial state.
* ``simulate``: closed-loop trace, replanning log and metrics.
* ``all``: the three stages in order.

Exit status: 0 when every output was written, 2 for scenario errors,
3 when no collision-free trajectory exists, 1 for anything else.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bezier import continuity_report, control_points
from .errors import NoFeasibleTrajectory, ParseError, RoadplanError
from .scenario import load_scenario, shipped_scenarios
from .sim import Scenario, build_reference, format_value, metrics, plan_cycle, run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3

STAGES = ("smooth", "plan", "simulate", "all")
REFERENCE_COLUMNS = ("s", "x", "y", "heading", "curvature")
CANDIDATE_COLUMNS = ("index", "l_e", "d_e", "cost", "checked", "feasible", "selected", "clearance")
CONTROL_POINT_COLUMNS = ("corner", "index", "x", "y")
CONTINUITY_COLUMNS = ("metric", "value")


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else format_value(v) for v in row])
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    """Numeric CSV back into columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def resolve_scenario(name: str) -> Path:
    """A file path, or the stem of a shipped scenario."""
    p = Path(name)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    if name in shipped:
        return shipped[name]
    raise FileNotFoundError(f"scenario {name!r} is neither a file nor a shipped scenario")


# --------------------------------------------------------------------------
# stages


def cmd_smooth(scenario: Scenario, out: Path, figures: bool = True) -> list[Path]:
    line = build_reference(scenario)
    written = [
        write_csv(
            out / "reference.csv",
            REFERENCE_COLUMNS,
            zip(line.s, line.x, line.y, line.heading, line.curvature),
        )
    ]
    report = continuity_report(line)
    written.append(write_csv(out / "continuity.csv", CONTINUITY_COLUMNS, report.rows()))
    beziers = [control_points(c) for c in scenario.corners]
    rows = [(k, i, float(p[0]), float(p[1])) for k, b in enumerate(beziers) for i, p in enumerate(b.array)]
    written.append(write_csv(out / "control_points.csv", CONTROL_POINT_COLUMNS, rows))
    if figures:
        from .plotting import plot_reference

        cps = [b.array for b in beziers]
        written.append(plot_reference(line, out / "reference.png", cps, scenario.waypoints))
    return written


def cmd_plan(scenario: Scenario, out: Path, figures: bool = True) -> list[Path]:
    """Write the candidate set.  Re-raises NoFeasibleTrajectory after writing it."""
    try:
        _, res = plan_cycle(scenario)
    except NoFeasibleTrajectory as exc:
        write_csv(out / "candidates.csv", CANDIDATE_COLUMNS, exc.result.rows())
        raise
    written = [write_csv(out / "candidates.csv", CANDIDATE_COLUMNS, res.rows())]
    smp = res.trajectory.samples
    written.append(
        write_csv(
            out / "selected.csv",
            ("l", "d", "x", "y", "heading", "curvature", "t"),
            zip(smp.l, smp.d, smp.x, smp.y, smp.heading, smp.curvature, smp.t),
        )
    )
    if figures:
        from .plotting import plot_candidates

        written.append(plot_candidates(res, out / "candidates.png"))
    return written


def cmd_simulate(scenario: Scenario, out: Path, figures: bool = True) -> list[Path]:
    trace = run(scenario)
    m = metrics(trace, scenario.vehicle.wheelbase)
    trace.write_csv(out / "trace.csv", out / "replans.csv")
    written = [out / "trace.csv", out / "replans.csv"]
    report = {
        "scenario": scenario.name,
        "seed": scenario.rng_seed,
        "metrics": {k: _json_value(v) for k, v in m.as_dict().items()},
        "events": [{"t": float(t), "event": e} for t, e in trace.events],
    }
    path = out / "metrics.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    if figures:
        from .plotting import plot_trace

        written.append(plot_trace(trace, out / "trace.png", [o.build() for o in scenario.obstacles]))
    return written


COMMANDS = {"smooth": cmd_smooth, "plan": cmd_plan, "simulate": cmd_simulate}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roadplan", description="Reference smoothing, lateral planning and closed-loop simulation.")
    p.add_argument("--scenario", help="scenario YAML file or shipped scenario name")
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario's noise seed")
    p.add_argument("--stage", choices=STAGES, default="all")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.add_argument("--list", action="store_true", help="list shipped scenarios and exit")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list:
        for name, path in sorted(shipped_scenarios().items()):
            print(f"{name}\t{path}")
        return EXIT_OK
    if not args.scenario:
        print("error: --scenario is required", file=sys.stderr)
        return EXIT_ERROR
    try:
        scenario = load_scenario(resolve_scenario(args.scenario))
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, rng_seed=args.seed)

    out = Path(args.out)
    stages = ("smooth", "plan", "simulate") if args.stage == "all" else (args.stage,)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for stage in stages:
            if stage == "plan" and not scenario.planner.enabled:
                print("plan: planner disabled in scenario, skipped")
                continue
            for path in COMMANDS[stage](scenario, out, figures=not args.no_figures):
                print(f"{stage}: wrote {path}")
    except NoFeasibleTrajectory as exc:
        print(f"no feasible trajectory: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RoadplanError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
