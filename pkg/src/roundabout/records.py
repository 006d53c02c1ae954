"""Trajectory records: CSV emission, parsing, and recomputed metrics.

One record per vehicle per timestep; the input columns are empty on the
final timestep, which carries no input.  Floats are written with 9
significant digits in a fixed column order so identical runs produce
byte-identical files, and all published metrics are recomputed from the
parsed (rounded) records so a report always agrees with an independent
recomputation from its CSV.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import centers_array
from .kinematics import Trajectory

__all__ = [
    "COLUMNS",
    "SCHEMA_VERSION",
    "TrajectoryRecord",
    "RecordError",
    "records_from_trajectories",
    "trajectories_from_records",
    "write_csv",
    "read_csv",
    "min_distance_profile",
    "metrics_from_records",
    "report_document",
    "write_report",
]

COLUMNS = ("vehicle_id", "tau", "time", "px", "py", "theta", "v", "delta", "a")
SCHEMA_VERSION = 1


class RecordError(ValueError):
    """Trajectory CSV does not match the expected schema."""


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: int
    tau: int
    time: float
    px: float
    py: float
    theta: float
    v: float
    delta: float | None  # None on the final timestep
    a: float | None


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def records_from_trajectories(trajs, params) -> list:
    records = []
    for vid, traj in enumerate(trajs):
        horizon = traj.horizon
        for tau in range(horizon + 1):
            px, py, theta, v = traj.states[tau]
            has_input = tau < horizon
            records.append(
                TrajectoryRecord(
                    vehicle_id=vid,
                    tau=tau,
                    time=tau * params.tau_s,
                    px=px,
                    py=py,
                    theta=theta,
                    v=v,
                    delta=float(traj.inputs[tau, 0]) if has_input else None,
                    a=float(traj.inputs[tau, 1]) if has_input else None,
                )
            )
    return records


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.vehicle_id,
                    r.tau,
                    _fmt(r.time),
                    _fmt(r.px),
                    _fmt(r.py),
                    _fmt(r.theta),
                    _fmt(r.v),
                    "" if r.delta is None else _fmt(r.delta),
                    "" if r.a is None else _fmt(r.a),
                ]
            )


def read_csv(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise RecordError(f"unexpected CSV header: {header}")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(COLUMNS):
                raise RecordError(f"line {line}: expected {len(COLUMNS)} columns")
            try:
                records.append(
                    TrajectoryRecord(
                        vehicle_id=int(row[0]),
                        tau=int(row[1]),
                        time=float(row[2]),
                        px=float(row[3]),
                        py=float(row[4]),
                        theta=float(row[5]),
                        v=float(row[6]),
                        delta=None if row[7] == "" else float(row[7]),
                        a=None if row[8] == "" else float(row[8]),
                    )
                )
            except ValueError as err:
                raise RecordError(f"line {line}: {err}") from err
    if not records:
        raise RecordError("trajectory CSV contains no records")
    return records


def _rounded(records) -> list:
    """Records as they would read back after the 9-digit round trip."""
    out = []
    for r in records:
        out.append(
            TrajectoryRecord(
                vehicle_id=r.vehicle_id,
                tau=r.tau,
                time=float(_fmt(r.time)),
                px=float(_fmt(r.px)),
                py=float(_fmt(r.py)),
                theta=float(_fmt(r.theta)),
                v=float(_fmt(r.v)),
                delta=None if r.delta is None else float(_fmt(r.delta)),
                a=None if r.a is None else float(_fmt(r.a)),
            )
        )
    return out


def trajectories_from_records(records) -> list:
    """Group records back into per-vehicle trajectories.

    Vehicle ids must be contiguous from 0 and every vehicle must cover
    the same timesteps 0..T with inputs absent exactly at T.
    """
    by_vehicle: dict = {}
    for r in records:
        by_vehicle.setdefault(r.vehicle_id, []).append(r)
    ids = sorted(by_vehicle)
    if ids != list(range(len(ids))):
        raise RecordError(f"vehicle ids not contiguous from 0: {ids}")
    trajs = []
    horizon = None
    for vid in ids:
        rows = sorted(by_vehicle[vid], key=lambda r: r.tau)
        taus = [r.tau for r in rows]
        if taus != list(range(len(rows))) or len(rows) < 2:
            raise RecordError(f"vehicle {vid}: timesteps not contiguous from 0")
        if horizon is None:
            horizon = len(rows) - 1
        elif len(rows) - 1 != horizon:
            raise RecordError(f"vehicle {vid}: horizon differs from vehicle 0")
        states = np.array([[r.px, r.py, r.theta, r.v] for r in rows])
        inputs = np.array([[r.delta, r.a] for r in rows[:-1]], dtype=float)
        if any(r.delta is None or r.a is None for r in rows[:-1]) or (
            rows[-1].delta is not None or rows[-1].a is not None
        ):
            raise RecordError(f"vehicle {vid}: inputs must be present exactly for tau < T")
        trajs.append(Trajectory(states=states, inputs=inputs))
    return trajs


def min_distance_profile(trajs, params) -> np.ndarray:
    """Per-timestep minimum circle-center distance over all vehicle pairs."""
    n = len(trajs)
    horizon = trajs[0].horizon
    if n < 2:
        return np.full(horizon + 1, math.inf)
    states = np.stack([t.states for t in trajs])
    centers = centers_array(states, params).transpose(0, 2, 1, 3)  # (N, 2, T+1, 2)
    pair_i, pair_j = np.triu_indices(n, 1)
    diff = centers[pair_i][:, :, None] - centers[pair_j][:, None, :]
    dist = np.linalg.norm(diff, axis=-1)  # (P, 2, 2, T+1)
    return dist.min(axis=(0, 1, 2))


def metrics_from_records(records, params, groups) -> dict:
    """Safety and efficiency metrics recomputed from (rounded) records."""
    trajs = trajectories_from_records(records)
    if len(groups) != len(trajs):
        raise RecordError("group list does not match the number of vehicles")
    profile = min_distance_profile(trajs, params)
    min_distance = float(np.min(profile))
    velocities: dict = {}
    for group in sorted(set(groups)):
        speeds = [float(np.mean(t.states[:, 3])) for t, g in zip(trajs, groups) if g == group]
        velocities[str(group)] = float(np.mean(speeds))
    deltas = np.concatenate([t.inputs[:, 0] for t in trajs])
    accs = np.concatenate([t.inputs[:, 1] for t in trajs])
    return {
        "min_pairwise_distance": min_distance if math.isfinite(min_distance) else None,
        "group_avg_velocity": velocities,
        "input_ranges": {
            "delta": [float(deltas.min()), float(deltas.max())],
            "a": [float(accs.min()), float(accs.max())],
        },
        "n_vehicles": len(trajs),
        "horizon": trajs[0].horizon,
    }


def report_document(report, records, params, groups) -> dict:
    """Full JSON report: solver summary plus CSV-consistent metrics."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "status": report.status,
        "outer_iterations": report.outer_iterations,
        "final_cost": report.final_cost,
        "cost_trace": list(report.cost_trace),
        "wall_time": report.wall_time,
        "workers": report.workers,
    }
    doc.update(metrics_from_records(_rounded(records), params, groups))
    return doc


def write_report(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
