"""Command-line interface: ``semplan plan | simulate | benchmark | export``.

Exit codes: 0 success (plan found, mission satisfied), 1 error, 2 no plan
found, 3 execution failed after too many replans, 4 execution violated
the mission.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .export import det_cov_csv, dfa_dot, trajectory_svg
from .planner.search import NotFound, PlanningError, PlanValidationError, plan, plan_from_dict
from .scenario import ScenarioError, load_scenario
from .sim import Status, execute

EXIT_OK, EXIT_ERROR, EXIT_NOT_FOUND, EXIT_MAX_REPLANS, EXIT_VIOLATION = 0, 1, 2, 3, 4

logger = logging.getLogger("semplan")


def _overrides(args) -> dict:
    out = {"seed": args.seed, "n_max": args.n_max, "p_rand": args.p_rand, "p_new": args.p_new,
           "tau": args.tau}
    if args.no_bias:
        out["bias"] = False
    return out


def _add_planner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--n-max", type=int, default=None, help="iteration budget")
    p.add_argument("--no-bias", action="store_true", help="uniform node and control sampling")
    p.add_argument("--p-rand", type=float, default=None, help="bucket bias in (0.5, 1)")
    p.add_argument("--p-new", type=float, default=None, help="control bias in (0.5, 1)")
    p.add_argument("--tau", type=float, default=None, help="time step override (s)")


def _write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    config = scenario.config(**_overrides(args))
    try:
        result = plan(scenario.problem(), config)
    except NotFound as exc:
        logger.error("%s", exc)
        return EXIT_NOT_FOUND
    doc = result.to_dict(scenario.semantic_map().ids)
    doc["stats"] = result.stats.to_dict() if result.stats else {}
    _write(args.out, json.dumps(doc, indent=2) + "\n")
    logger.info("plan found: H=%d cost=%.3f", result.H, result.cost)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    config = scenario.config(**_overrides(args))
    problem = scenario.problem()
    doc = json.loads(Path(args.plan).read_text())
    plan_ = plan_from_dict(doc, problem, config)
    trace = execute(plan_, problem, scenario.ground_truth(), max_replans=args.max_replans,
                    seed=args.seed or 0, config=config, zero_noise=args.zero_noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    (out / "summary.json").write_text(json.dumps(trace.summary(), indent=2) + "\n")
    logger.info("execution %s after %d replans", trace.status.value, trace.n_replans)
    return {
        Status.SATISFIED: EXIT_OK,
        Status.FAILED_MAX_REPLANS: EXIT_MAX_REPLANS,
    }.get(trace.status, EXIT_VIOLATION)


def cmd_benchmark(args) -> int:
    data = json.loads(Path(args.spec).read_text())
    if data.get("schema", bm.BENCHMARK_SCHEMA) != bm.BENCHMARK_SCHEMA:
        raise ValueError(f"unknown benchmark schema {data.get('schema')!r}")
    spec = bm.SweepSpec.from_dict(data)
    if args.n_max is not None:
        spec.n_max = args.n_max
    _, cells = bm.sweep(spec)
    if args.out in (None, "-"):
        bm.write_csv(cells, sys.stdout)
    else:
        bm.write_csv(cells, args.out)
    return EXIT_OK


def cmd_export(args) -> int:
    doc = json.loads(Path(args.input).read_text())
    steps = doc.get("steps", [])
    if args.format == "csv":
        ids = [lm["id"] for lm in steps[0]["landmarks"]] if steps else []
        if args.scenario and not ids:
            ids = list(load_scenario(args.scenario).semantic_map().ids)
        _write(args.out, det_cov_csv(steps, ids))
        return EXIT_OK
    if not args.scenario:
        raise ValueError(f"--scenario is required for format {args.format!r}")
    scenario = load_scenario(args.scenario)
    if args.format == "dot":
        _write(args.out, dfa_dot(scenario.problem().dfa))
        return EXIT_OK
    if args.format == "svg":
        poses = np.array([s["poses"] for s in steps]) if steps else np.zeros((0, 0, 3))
        paths = [poses[:, j, :2] for j in range(poses.shape[1])] if steps else []
        smap = scenario.semantic_map()
        final = steps[-1]["landmarks"] if steps else []
        lms = [(lid, smap.means[i], smap.covs[i]) for i, lid in enumerate(smap.ids)]
        if final:
            lms = [(lm["id"], np.array(lm["mean"]), smap.covs[smap.index(lm["id"])]) for lm in final]
        _write(args.out, trajectory_svg(scenario.workspace, paths, lms))
        return EXIT_OK
    raise ValueError(f"unknown format {args.format!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semplan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan a mission for a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", default="-", help="plan document path (default: stdout)")
    _add_planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="execute a plan against the scenario's ground truth")
    p.add_argument("scenario")
    p.add_argument("plan")
    p.add_argument("--out", default="trace", help="output directory")
    p.add_argument("--max-replans", type=int, default=10)
    p.add_argument("--zero-noise", action="store_true", help="noise-free range readings")
    _add_planner_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run a scalability sweep")
    p.add_argument("spec")
    p.add_argument("--out", default="-", help="results CSV (default: stdout)")
    p.add_argument("--n-max", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("export", help="render a plan document")
    p.add_argument("input", help="plan document")
    p.add_argument("--format", choices=("svg", "dot", "csv"), required=True)
    p.add_argument("--scenario", help="scenario file (needed for svg and dot)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except (PlanValidationError, PlanningError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
