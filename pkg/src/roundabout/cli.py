"""Command-line surface: generate / solve / baseline / metrics / plot.

Exit codes: 0 success, 2 solver did not converge, 3 validation or schema
error, 4 I/O error.  ROUNDABOUT_WORKERS provides the default worker count
for solve.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import baseline as baseline_mod
from . import coordinator, plots, records
from .records import RecordError
from .scenario import ScenarioError, generate_roundabout, load_scenario

__all__ = ["main"]

EXIT_OK = 0
EXIT_NO_CONVERGENCE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4


def _default_workers() -> int:
    return int(os.environ.get("ROUNDABOUT_WORKERS", "1"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roundabout",
        description="Cooperative trajectory optimization for connected vehicles "
        "at unsignalized roundabouts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit a synthetic roundabout scenario file")
    gen.add_argument("--n-vehicles", type=int, default=16)
    gen.add_argument("--inner-radius", type=float, default=22.0)
    gen.add_argument("--outer-radius", type=float, default=30.0)
    gen.add_argument("--entrances", type=int, default=4)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    slv = sub.add_parser("solve", help="run the cooperative solver on a scenario")
    slv.add_argument("--scenario", required=True)
    slv.add_argument("--out-traj", required=True)
    slv.add_argument("--out-report", required=True)
    slv.add_argument("--workers", type=int, default=None)
    slv.add_argument("--max-outer", type=int, default=None)

    base = sub.add_parser("baseline", help="run the rule-based comparison policy")
    base.add_argument("--scenario", required=True)
    base.add_argument("--out-traj", required=True)
    base.add_argument("--out-report", required=True)

    met = sub.add_parser("metrics", help="recompute metrics from a trajectory CSV")
    met.add_argument("--scenario", required=True)
    met.add_argument("--traj", required=True)
    met.add_argument("--out", default=None, help="default: stdout")

    plot = sub.add_parser("plot", help="emit SVG plots from a trajectory CSV")
    plot.add_argument("--scenario", required=True)
    plot.add_argument("--traj", required=True)
    plot.add_argument("--out-dir", required=True)

    return parser


def _cmd_generate(args) -> int:
    doc = generate_roundabout(
        n_vehicles=args.n_vehicles,
        inner_radius=args.inner_radius,
        outer_radius=args.outer_radius,
        entrances=args.entrances,
        seed=args.seed,
    )
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def _cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    workers = args.workers if args.workers is not None else _default_workers()
    trajs, report = coordinator.solve(scenario, workers=workers, max_outer=args.max_outer)
    recs = records.records_from_trajectories(trajs, scenario.params)
    records.write_csv(recs, args.out_traj)
    doc = records.report_document(report, recs, scenario.params, scenario.groups())
    records.write_report(doc, args.out_report)
    print(
        f"{report.status}: {report.outer_iterations} outer iterations, "
        f"min distance {report.min_pairwise_distance:.3f} m, "
        f"{report.wall_time:.2f} s with {report.workers} worker(s)"
    )
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


def _cmd_baseline(args) -> int:
    scenario = load_scenario(args.scenario)
    t0 = time.perf_counter()
    trajs = baseline_mod.simulate_baseline(scenario)
    elapsed = time.perf_counter() - t0
    from .convexify import path_tracking_cost

    paths = [p for _, p, _ in scenario.vehicles]
    cost = float(sum(path_tracking_cost(t, p, scenario.params) for t, p in zip(trajs, paths)))
    report = coordinator.SolveReport(
        status="baseline",
        outer_iterations=0,
        final_cost=cost,
        cost_trace=[cost],
        min_pairwise_distance=coordinator.min_circle_distance(trajs, scenario.params),
        wall_time=elapsed,
        group_avg_velocity=coordinator.group_average_velocities(trajs, scenario.groups()),
        workers=1,
        n_vehicles=scenario.n_vehicles,
        horizon=scenario.params.horizon_T,
    )
    recs = records.records_from_trajectories(trajs, scenario.params)
    records.write_csv(recs, args.out_traj)
    doc = records.report_document(report, recs, scenario.params, scenario.groups())
    records.write_report(doc, args.out_report)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    scenario = load_scenario(args.scenario)
    recs = records.read_csv(args.traj)
    doc = {"schema_version": records.SCHEMA_VERSION}
    doc.update(records.metrics_from_records(recs, scenario.params, scenario.groups()))
    if args.out is None:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        records.write_report(doc, args.out)
    return EXIT_OK


def _cmd_plot(args) -> int:
    scenario = load_scenario(args.scenario)
    recs = records.read_csv(args.traj)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in plots.emit_all(recs, scenario, out_dir):
        print(path)
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "solve": _cmd_solve,
    "baseline": _cmd_baseline,
    "metrics": _cmd_metrics,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ScenarioError, RecordError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
