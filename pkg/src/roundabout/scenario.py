"""Scenario loading, validation, and synthetic roundabout generation.

A scenario bundles the solver parameters, a dense point-cloud sampling of
the road boundaries, and one (initial state, reference path, entrance
group) triple per vehicle.  Everything is immutable after construction so
scenarios can be shared freely across worker processes.

Scenario files are JSON documents::

    {
      "params": {...},                       # SolverParams fields, partial ok
      "boundary_polylines": [[[x, y], ...], ...],
      "vehicles": [
        {"start": [x, y, theta, v],
         "reference_polyline": [[x, y], ...],
         "group": 1},
        ...
      ]
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .kinematics import VehicleState

__all__ = [
    "SolverParams",
    "PointIndex",
    "BoundaryCloud",
    "ReferencePath",
    "Scenario",
    "ScenarioError",
    "ParseError",
    "ValidationError",
    "nearest_neighbor",
    "densify_polyline",
    "load_scenario",
    "scenario_from_dict",
    "generate_roundabout",
]


class ScenarioError(ValueError):
    """Base class for scenario file problems."""


class ParseError(ScenarioError):
    """The file is not a well-formed scenario document."""


class ValidationError(ScenarioError):
    """The document parsed but violates a scenario invariant."""


@dataclass(frozen=True)
class SolverParams:
    """Model, bound, and solver parameters shared by every vehicle.

    Defaults are the experiment settings the solver is tuned for; the cost
    weights (w_*) and max_outer_iters have no canonical source and are
    chosen so that input profiles stay well inside their bounds on the
    synthetic scenarios.  All fields can be overridden from the scenario
    file's "params" object.
    """

    wheelbase_b: float = 2.875  # m
    tau_s: float = 0.1  # s
    horizon_T: int = 75
    a_min: float = -12.0  # m/s^2
    a_max: float = 8.0  # m/s^2
    delta_min: float = -0.62  # rad
    delta_max: float = 0.62  # rad
    d_safe: float = 2.62  # m, required circle center-to-center distance
    d_f: float = 2.79  # m, rear axle -> front circle center bias
    d_r: float = -0.05  # m, rear axle -> rear circle center bias
    v_ref: float = 10.0  # m/s
    sigma: float = 0.2
    rho: float = 0.02
    epsilon: float = 0.3  # constraint margin pushed into the feasible side
    k_max: int = 2  # inner iterations per outer iteration
    zeta: float = 1.0  # outer termination threshold on |cost change|
    max_outer_iters: int = 100
    w_lat: float = 1.0
    w_vel: float = 0.5
    w_delta: float = 1.0
    w_acc: float = 0.1
    max_gap: float = 0.25  # m, densification spacing for clouds and paths

    def __post_init__(self) -> None:
        checks = [
            (self.wheelbase_b > 0, "wheelbase_b must be positive"),
            (self.tau_s > 0, "tau_s must be positive"),
            (self.horizon_T >= 1, "horizon_T must be at least 1"),
            (self.a_min < self.a_max, "a_min must be below a_max"),
            (self.delta_min < self.delta_max, "delta_min must be below delta_max"),
            (self.d_safe > 0, "d_safe must be positive"),
            (self.sigma > 0, "sigma must be positive"),
            (self.rho > 0, "rho must be positive"),
            (self.epsilon >= 0, "epsilon must be non-negative"),
            (self.k_max >= 1, "k_max must be at least 1"),
            (self.zeta > 0, "zeta must be positive"),
            (self.max_outer_iters >= 1, "max_outer_iters must be at least 1"),
            (self.w_lat > 0, "w_lat must be positive"),
            (self.w_vel > 0, "w_vel must be positive"),
            (self.w_delta > 0, "w_delta must be positive"),
            (self.w_acc > 0, "w_acc must be positive"),
            (self.max_gap > 0, "max_gap must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    @property
    def vehicle_length(self) -> float:
        """Length of the two-circle footprint: center span plus one diameter."""
        return (self.d_f - self.d_r) + self.d_safe


class PointIndex:
    """Exact nearest-neighbor search over a fixed set of 2-D points.

    Backed by a k-d tree; distance ties are broken by lowest insertion
    index so queries are deterministic across platforms.
    """

    def __init__(self, points: np.ndarray) -> None:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
            raise ValueError("need a non-empty (n, 2) point array")
        self.points = points
        self.points.setflags(write=False)
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray) -> np.ndarray:
        """Indices of the nearest stored point for each row of queries."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if len(self.points) == 1:
            return np.zeros(len(queries), dtype=np.intp)
        dist, idx = self._tree.query(queries, k=2)
        nearest = idx[:, 0].astype(np.intp)
        tied = dist[:, 0] == dist[:, 1]
        for row in np.nonzero(tied)[0]:
            nearest[row] = self._resolve_tie(queries[row], dist[row, 0])
        return nearest

    def query_one(self, q) -> int:
        return int(self.query(np.asarray(q, dtype=float)[None, :])[0])

    def _resolve_tie(self, q: np.ndarray, d: float) -> int:
        # Inflate the radius a hair so every candidate at the tied distance
        # survives the tree's own rounding, then settle the tie in plain
        # numpy arithmetic: first index attaining the minimum wins.
        radius = d + 1e-9 * (1.0 + d)
        candidates = np.sort(self._tree.query_ball_point(q, radius))
        diffs = self.points[candidates] - q
        d2 = np.einsum("ij,ij->i", diffs, diffs)
        return int(candidates[np.argmin(d2)])


def nearest_neighbor(index: PointIndex, q) -> np.ndarray:
    """The stored point closest to q (ties -> lowest insertion index)."""
    return index.points[index.query_one(q)].copy()


def densify_polyline(points: np.ndarray, max_gap: float) -> np.ndarray:
    """Insert evenly spaced samples so consecutive points are <= max_gap apart.

    Original vertices are preserved; degenerate zero-length segments are
    dropped.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 2:
        raise ValueError("polyline needs at least two 2-D points")
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        seg = np.linalg.norm(b - a)
        if seg == 0.0:
            continue
        pieces = max(1, int(math.ceil(seg / max_gap)))
        for k in range(1, pieces + 1):
            out.append(a + (b - a) * (k / pieces))
    return np.array(out)


@dataclass(frozen=True)
class BoundaryCloud:
    """Dense, raw (unshifted) sampling of every road boundary polyline."""

    points: np.ndarray
    index: PointIndex = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise ValidationError("boundary cloud must be a non-empty (n, 2) array")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "index", PointIndex(pts))

    @staticmethod
    def from_polylines(polylines, max_gap: float) -> "BoundaryCloud":
        chunks = [densify_polyline(np.asarray(p, dtype=float), max_gap) for p in polylines]
        if not chunks:
            raise ValidationError("scenario has no boundary polylines")
        return BoundaryCloud(points=np.vstack(chunks))


@dataclass(frozen=True)
class ReferencePath:
    """Densified navigation path with per-waypoint unit tangents.

    arclength[k] is the cumulative distance from the first waypoint; the
    monotone progress of assigned waypoints is measured against it.
    """

    waypoints: np.ndarray
    tangents: np.ndarray = field(init=False, repr=False, compare=False)
    arclength: np.ndarray = field(init=False, repr=False, compare=False)
    index: PointIndex = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        wps = np.asarray(self.waypoints, dtype=float)
        if wps.ndim != 2 or wps.shape[1] != 2 or len(wps) < 2:
            raise ValidationError("reference path needs at least two waypoints")
        diffs = np.diff(wps, axis=0)
        seg = np.linalg.norm(diffs, axis=1)
        if np.any(seg == 0.0):
            raise ValidationError("reference path contains duplicate consecutive waypoints")
        # Central differences in the interior, one-sided at the ends.
        tangents = np.empty_like(wps)
        tangents[0] = diffs[0]
        tangents[-1] = diffs[-1]
        if len(wps) > 2:
            tangents[1:-1] = wps[2:] - wps[:-2]
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        arclength = np.concatenate([[0.0], np.cumsum(seg)])
        object.__setattr__(self, "waypoints", wps)
        object.__setattr__(self, "tangents", tangents)
        object.__setattr__(self, "arclength", arclength)
        object.__setattr__(self, "index", PointIndex(wps))

    @staticmethod
    def from_polyline(polyline, max_gap: float) -> "ReferencePath":
        return ReferencePath(waypoints=densify_polyline(np.asarray(polyline, dtype=float), max_gap))


@dataclass(frozen=True)
class Scenario:
    """Validated problem instance: parameters, boundary, and vehicles."""

    params: SolverParams
    boundary: BoundaryCloud
    vehicles: tuple  # of (VehicleState, ReferencePath, group_id)

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    def initial_states(self) -> np.ndarray:
        return np.array([[s.px, s.py, s.theta, s.v] for s, _, _ in self.vehicles])

    def groups(self) -> list:
        return [g for _, _, g in self.vehicles]


def _validate_scenario(scenario: Scenario) -> None:
    params = scenario.params
    positions = scenario.initial_states()[:, :2]

    dists = scenario.boundary.index
    for i, pos in enumerate(positions):
        d = np.linalg.norm(dists.points[dists.query_one(pos)] - pos)
        if not d > params.d_safe / 2:
            raise ValidationError(
                f"vehicle {i} starts {d:.3f} m from the boundary, needs > {params.d_safe / 2:.3f} m"
            )

    min_start_gap = params.d_safe + params.vehicle_length
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            d = float(np.linalg.norm(positions[i] - positions[j]))
            if not d > min_start_gap:
                raise ValidationError(
                    f"vehicles {i} and {j} initially closer than d_safe + vehicle length "
                    f"({d:.3f} m <= {min_start_gap:.3f} m)"
                )

    for i, (_, path, group) in enumerate(scenario.vehicles):
        if np.any(np.diff(path.arclength) > params.max_gap * (1 + 1e-9)):
            raise ValidationError(f"vehicle {i} reference path has gaps above max_gap")
        if not isinstance(group, int) or group < 1:
            raise ValidationError(f"vehicle {i} group id must be a positive integer")


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and validate a Scenario from a parsed scenario document."""
    try:
        params_doc = dict(doc.get("params", {}))
        known = {f.name for f in fields(SolverParams)}
        unknown = set(params_doc) - known
        if unknown:
            raise ParseError(f"unknown params fields: {sorted(unknown)}")
        params = SolverParams(**params_doc)
        boundary = BoundaryCloud.from_polylines(doc["boundary_polylines"], params.max_gap)
        vehicles = []
        for v in doc["vehicles"]:
            px, py, theta, speed = (float(c) for c in v["start"])
            path = ReferencePath.from_polyline(v["reference_polyline"], params.max_gap)
            vehicles.append((VehicleState(px, py, theta, speed), path, int(v["group"])))
        if not vehicles:
            raise ValidationError("scenario has no vehicles")
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"malformed scenario document: {err}") from err

    scenario = Scenario(params=params, boundary=boundary, vehicles=tuple(vehicles))
    _validate_scenario(scenario)
    return scenario


def load_scenario(path) -> Scenario:
    """Load, parse, and validate a scenario JSON file."""
    raw = Path(path).read_text()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: {err}") from err
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top-level value must be an object")
    return scenario_from_dict(doc)


# --------------------------------------------------------------------------
# Synthetic roundabout generator
# --------------------------------------------------------------------------

def _tangent_frame(angle: float):
    """Tangency point and unit direction of the approach lane at `angle`."""
    radial = np.array([math.cos(angle), math.sin(angle)])
    tangent = np.array([-math.sin(angle), math.cos(angle)])  # counterclockwise
    return radial, tangent


def generate_roundabout(
    n_vehicles: int = 16,
    inner_radius: float = 22.0,
    outer_radius: float = 30.0,
    entrances: int = 4,
    seed: int = 0,
    params: SolverParams | None = None,
    lane_width: float = 6.0,
    corridor_length: float = 70.0,
    start_offset: float = 8.0,
    start_gap: float = 10.0,
    conflict_lead: float = 4.5,
) -> dict:
    """Emit a scenario document for a circular roundabout with tangent entries.

    Vehicles are split evenly across `entrances` approach lanes, each lane
    tangent to the ring's centerline so merges need no sharp turns.  Every
    vehicle circulates half the ring and leaves through the opposite exit
    lane.

    The back half of each lane's platoon is scheduled to reach its merge
    point `conflict_lead` meters ahead of the upstream lane's front
    platoon arriving at the same point, so unsignalized merge conflicts
    genuinely occur and must be negotiated.  The seed only perturbs start
    gaps by up to half a meter; geometry is otherwise deterministic.

    Emitted files raise max_outer_iters to 250 unless explicit params are
    passed: resolving the scheduled merge conflicts under the damped
    trajectory updates routinely needs beyond the library's default cap.
    """
    from shapely.geometry import Point, Polygon
    from shapely.ops import unary_union

    if inner_radius >= outer_radius:
        raise ValidationError("inner_radius must be below outer_radius")
    if entrances < 2:
        raise ValidationError("need at least two entrances")
    if n_vehicles < 1:
        raise ValidationError("need at least one vehicle")
    if lane_width >= outer_radius - inner_radius:
        raise ValidationError("lane_width must be below the ring width")

    params = params or SolverParams(max_outer_iters=250)
    r_center = 0.5 * (inner_radius + outer_radius)
    rng = np.random.default_rng(seed)

    # Drivable region: annulus plus one rectangle per entrance, oriented along
    # the tangent line at its merge point.  shapely takes care of the union
    # boundary; polygons are later densified by the loader.
    ring = Point(0.0, 0.0).buffer(outer_radius, quad_segs=256).difference(
        Point(0.0, 0.0).buffer(inner_radius, quad_segs=256)
    )
    shapes = [ring]
    angles = [2.0 * math.pi * e / entrances for e in range(entrances)]
    for angle in angles:
        radial, tangent = _tangent_frame(angle)
        anchor = r_center * radial
        half_w = 0.5 * lane_width
        corners = [
            anchor - corridor_length * tangent - half_w * radial,
            anchor - corridor_length * tangent + half_w * radial,
            anchor + corridor_length * tangent + half_w * radial,
            anchor + corridor_length * tangent - half_w * radial,
        ]
        shapes.append(Polygon([tuple(c) for c in corners]))
    drivable = unary_union(shapes)

    boundary_polylines = [list(map(list, drivable.exterior.coords))]
    for hole in drivable.interiors:
        boundary_polylines.append(list(map(list, hole.coords)))

    vehicles = []
    per_group = [n_vehicles // entrances] * entrances
    for e in range(n_vehicles % entrances):
        per_group[e] += 1
    # Arc between consecutive entrances; upstream traffic needs this much
    # extra travel to reach the next merge point.
    merge_arc = (2.0 * math.pi / entrances) * r_center
    for group_index, angle in enumerate(angles):
        radial, tangent = _tangent_frame(angle)
        anchor = r_center * radial
        exit_angle = angles[(group_index + entrances // 2) % entrances]
        exit_radial, exit_tangent = _tangent_frame(exit_angle)
        exit_anchor = r_center * exit_radial

        count = per_group[group_index]
        front = (count + 1) // 2
        # Counterclockwise arc from this entrance to its exit lane.
        arc_span = 2.0 * math.pi * (entrances // 2) / entrances
        for k in range(count):
            if k < front:
                offset = start_offset + k * start_gap
            else:
                offset = merge_arc + start_offset + (k - front) * start_gap - conflict_lead
            offset += float(rng.uniform(0.0, 0.5))
            if offset + 5.0 > corridor_length:
                raise ValidationError(
                    "corridor_length too short for the requested platoons"
                )
            start_pos = anchor - offset * tangent
            heading = math.atan2(tangent[1], tangent[0])

            # Reference: straight approach, ring arc, straight exit.
            path = [start_pos - 2.0 * tangent]  # a little slack behind the start
            steps = int(math.ceil(offset))
            for s in range(steps + 1):
                path.append(anchor - (offset * (1.0 - s / steps)) * tangent)
            arc_steps = int(math.ceil(arc_span * r_center))
            for s in range(1, arc_steps + 1):
                a = angle + arc_span * s / arc_steps
                path.append(r_center * np.array([math.cos(a), math.sin(a)]))
            exit_steps = int(math.ceil(corridor_length * 0.8))
            for s in range(1, exit_steps + 1):
                path.append(exit_anchor + (corridor_length * 0.8) * (s / exit_steps) * exit_tangent)

            vehicles.append(
                {
                    "start": [float(start_pos[0]), float(start_pos[1]), heading, params.v_ref],
                    "reference_polyline": [[float(p[0]), float(p[1])] for p in path],
                    "group": group_index + 1,
                }
            )

    params_doc = {f.name: getattr(params, f.name) for f in fields(SolverParams)}
    return {
        "params": params_doc,
        "boundary_polylines": boundary_polylines,
        "vehicles": vehicles,
    }
