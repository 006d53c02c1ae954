"""Two-circle vehicle footprints and linearized safety constraints.

Every vehicle is covered by a front and a rear circle whose centers sit at
signed biases d_f / d_r ahead of the rear axle along the heading.  Keeping
circle centers of different vehicles at least d_safe apart (the common
diameter) is sufficient for collision avoidance, and keeping every center
at least d_safe/2 away from the raw boundary samples keeps the footprint
on the road.

All constraints are linearized around the nominal trajectories into rows

    sum_i coeff_i . dvar_i + offset >= 0

where dvar is the per-timestep state variation for collision/boundary rows
and the input variation for input-bound rows.  The global row ordering is
canonical and must never change: all collision rows ordered by
(tau, i, j, beta, gamma), then boundary rows by (tau, i, beta), then input
rows by (tau, i, bound-kind); the consensus vectors of the distributed
solver index into this layout, so every vehicle has to agree on it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CIRCLES",
    "INPUT_KINDS",
    "CirclePair",
    "DegenerateGeometryError",
    "LinearConstraintRow",
    "RowLayout",
    "circle_centers",
    "centers_array",
    "position_jacobian",
    "collision_rows",
    "boundary_rows",
    "input_rows",
]

CIRCLES = ("f", "r")
# Canonical bound-kind order for the four input rows at each timestep.
INPUT_KINDS = ("a_lower", "a_upper", "delta_lower", "delta_upper")

_MIN_SEPARATION = 1e-9  # below this, a normal direction is meaningless


class DegenerateGeometryError(ValueError):
    """Coincident points make a constraint normal undefined."""


@dataclass(frozen=True)
class CirclePair:
    """Front and rear circle centers of one vehicle at one timestep."""

    p_f: np.ndarray
    p_r: np.ndarray


def circle_centers(x, params) -> CirclePair:
    """Circle centers for a state (VehicleState or length-4 array)."""
    px, py, theta = x.px, x.py, x.theta
    c, s = math.cos(theta), math.sin(theta)
    return CirclePair(
        p_f=np.array([px + params.d_f * c, py + params.d_f * s]),
        p_r=np.array([px + params.d_r * c, py + params.d_r * s]),
    )


def centers_array(states: np.ndarray, params) -> np.ndarray:
    """Circle centers for stacked states (..., 4) -> (..., 2 circles, 2)."""
    states = np.asarray(states, dtype=float)
    pos = states[..., :2]
    theta = states[..., 2]
    heading = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    biases = np.array([params.d_f, params.d_r])
    return pos[..., None, :] + biases[:, None] * heading[..., None, :]


def position_jacobian(theta: float, d_beta: float) -> np.ndarray:
    """2x4 sensitivity of a circle center to the state (px, py, theta, v)."""
    return np.array(
        [
            [1.0, 0.0, -d_beta * math.sin(theta), 0.0],
            [0.0, 1.0, d_beta * math.cos(theta), 0.0],
        ]
    )


def _state_coeff(nvec: np.ndarray, theta: float, d_beta: float) -> np.ndarray:
    """n^T J as a length-4 row without forming J."""
    nx, ny = nvec
    return np.array([nx, ny, d_beta * (-nx * math.sin(theta) + ny * math.cos(theta)), 0.0])


@dataclass(frozen=True)
class LinearConstraintRow:
    """One linearized inequality: sum_i coefficients[i] . dvar_i + offset >= 0."""

    kind: str  # collision | boundary | input_lower | input_upper
    coefficients: dict  # vehicle id -> (4,) state block or (2,) input block
    offset: float
    meta: dict

    def value(self, deltas: dict) -> float:
        """Evaluate the row at per-vehicle variations (missing ids count as 0)."""
        total = self.offset
        for vid, coeff in self.coefficients.items():
            dv = deltas.get(vid)
            if dv is not None:
                total += float(coeff @ dv)
        return total


@dataclass(frozen=True)
class RowLayout:
    """Canonical global row ordering for N vehicles over horizon T."""

    n_vehicles: int
    horizon: int

    @property
    def n_pairs(self) -> int:
        return self.n_vehicles * (self.n_vehicles - 1) // 2

    @property
    def n_collision(self) -> int:
        return 4 * self.n_pairs * (self.horizon + 1)

    @property
    def n_boundary(self) -> int:
        return 2 * self.n_vehicles * (self.horizon + 1)

    @property
    def n_input(self) -> int:
        return 4 * self.n_vehicles * self.horizon

    @property
    def n(self) -> int:
        return self.n_collision + self.n_boundary + self.n_input

    def pair_index(self, i: int, j: int) -> int:
        if not 0 <= i < j < self.n_vehicles:
            raise IndexError(f"bad vehicle pair ({i}, {j})")
        return i * self.n_vehicles - i * (i + 1) // 2 + (j - i - 1)

    def collision_row(self, tau: int, i: int, j: int, beta: int, gamma: int) -> int:
        return tau * 4 * self.n_pairs + self.pair_index(i, j) * 4 + beta * 2 + gamma

    def boundary_row(self, tau: int, i: int, beta: int) -> int:
        return self.n_collision + tau * 2 * self.n_vehicles + i * 2 + beta

    def input_row(self, tau: int, i: int, kind: int) -> int:
        return (
            self.n_collision
            + self.n_boundary
            + tau * 4 * self.n_vehicles
            + i * 4
            + kind
        )


def collision_rows(trajs, params) -> list:
    """Linearized pairwise-circle separation rows, canonical order.

    One row per unordered vehicle pair, circle combination, and timestep;
    the unit normal points from vehicle j's circle center toward vehicle
    i's, so positive variation of i along the normal grows the distance.
    """
    n_vehicles = len(trajs)
    horizon = trajs[0].horizon
    biases = (params.d_f, params.d_r)
    rows = []
    for tau in range(horizon + 1):
        for i in range(n_vehicles):
            for j in range(i + 1, n_vehicles):
                xi, xj = trajs[i].states[tau], trajs[j].states[tau]
                ci = centers_array(xi, params)
                cj = centers_array(xj, params)
                for beta in range(2):
                    for gamma in range(2):
                        diff = ci[beta] - cj[gamma]
                        dist = float(np.linalg.norm(diff))
                        if dist < _MIN_SEPARATION:
                            raise DegenerateGeometryError(
                                f"coincident circle centers: vehicles {i}/{j}, "
                                f"circles {CIRCLES[beta]}/{CIRCLES[gamma]}, tau={tau}"
                            )
                        nvec = diff / dist
                        rows.append(
                            LinearConstraintRow(
                                kind="collision",
                                coefficients={
                                    i: _state_coeff(nvec, xi[2], biases[beta]),
                                    j: -_state_coeff(nvec, xj[2], biases[gamma]),
                                },
                                offset=dist - params.d_safe,
                                meta={
                                    "tau": tau,
                                    "vehicles": (i, j),
                                    "circles": (CIRCLES[beta], CIRCLES[gamma]),
                                    "normal": nvec,
                                },
                            )
                        )
    return rows


def boundary_rows(traj, boundary, params, vehicle: int = 0) -> list:
    """Linearized road-boundary rows for one vehicle, canonical order.

    The normal points from the nearest boundary sample toward the circle
    center; the factor 2 turns the center-to-raw-boundary distance into a
    diameter-comparable quantity, so the offset is 2*d - d_safe.
    """
    horizon = traj.horizon
    biases = (params.d_f, params.d_r)
    rows = []
    for tau in range(horizon + 1):
        x = traj.states[tau]
        centers = centers_array(x, params)
        for beta in range(2):
            center = centers[beta]
            nearest = boundary.index.points[boundary.index.query_one(center)]
            diff = center - nearest
            dist = float(np.linalg.norm(diff))
            if dist < _MIN_SEPARATION:
                raise DegenerateGeometryError(
                    f"circle center on boundary sample: vehicle {vehicle}, "
                    f"circle {CIRCLES[beta]}, tau={tau}"
                )
            nvec = diff / dist
            rows.append(
                LinearConstraintRow(
                    kind="boundary",
                    coefficients={vehicle: 2.0 * _state_coeff(nvec, x[2], biases[beta])},
                    offset=2.0 * dist - params.d_safe,
                    meta={
                        "tau": tau,
                        "vehicles": (vehicle,),
                        "circles": (CIRCLES[beta],),
                        "normal": nvec,
                    },
                )
            )
    return rows


def input_rows(traj, params, vehicle: int = 0) -> list:
    """Box-bound rows on the input variation, canonical order.

    Bound-kind order per timestep: a_lower, a_upper, delta_lower,
    delta_upper, matching RowLayout.input_row.
    """
    rows = []
    for tau in range(traj.horizon):
        delta, a = traj.inputs[tau]
        per_tau = [
            ("input_lower", np.array([0.0, 1.0]), a - params.a_min, "a"),
            ("input_upper", np.array([0.0, -1.0]), params.a_max - a, "a"),
            ("input_lower", np.array([1.0, 0.0]), delta - params.delta_min, "delta"),
            ("input_upper", np.array([-1.0, 0.0]), params.delta_max - delta, "delta"),
        ]
        for kind, coeff, offset, channel in per_tau:
            rows.append(
                LinearConstraintRow(
                    kind=kind,
                    coefficients={vehicle: coeff},
                    offset=float(offset),
                    meta={"tau": tau, "vehicles": (vehicle,), "channel": channel},
                )
            )
    return rows
