"""Per-iteration convex subproblem construction.

Around the current nominal trajectories this module builds (a) the
quadratic tracking cost with nearest-waypoint references, and (b) the
stacked linear constraint system covering collision avoidance, road
boundaries, and input bounds.

Reference waypoints are reassigned by nearest-neighbor search on every
outer iteration: a vehicle already ahead picks references further along
its path while one falling behind does the opposite, so a passing order
emerges from repeated reassignment against the separation constraints
instead of being scheduled up front.  Only lateral deviation from the
path is penalized (the tangent direction is cost-free to first order),
the speed target is a constant v_ref, and heading carries no weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CIRCLES,
    INPUT_KINDS,
    DegenerateGeometryError,
    LinearConstraintRow,
    RowLayout,
    centers_array,
)

__all__ = [
    "ReferenceAssignment",
    "TrackingCost",
    "VehicleBlocks",
    "ConstraintSystem",
    "assign_references",
    "build_tracking_cost",
    "build_constraint_system",
    "path_tracking_cost",
]

# Input-row coefficient blocks in canonical bound-kind order
# (a_lower, a_upper, delta_lower, delta_upper) acting on du = (ddelta, da).
_INPUT_COEFF = np.array(
    [
        [0.0, 1.0],
        [0.0, -1.0],
        [1.0, 0.0],
        [-1.0, 0.0],
    ]
)

_MIN_SEPARATION = 1e-9


@dataclass(frozen=True)
class ReferenceAssignment:
    """Per-timestep reference waypoints with their tangents and path indices."""

    points: np.ndarray  # (T+1, 2)
    tangents: np.ndarray  # (T+1, 2)
    indices: np.ndarray  # (T+1,) waypoint indices into the path


def assign_references(traj, path, params) -> ReferenceAssignment:
    """Nearest path waypoint (plus tangent) for every nominal position."""
    idx = path.index.query(traj.states[:, :2])
    return ReferenceAssignment(
        points=path.waypoints[idx],
        tangents=path.tangents[idx],
        indices=idx,
    )


@dataclass
class TrackingCost:
    """Quadratic model of the tracking objective around the nominal.

    The objective in the variations is
        sum_tau dx' Q[tau] dx + q[tau]' dx  +  sum_tau du' R du + r[tau]' du
    with q = 2 Q (x - x_ref) and r = 2 R u, so minimizing it is equivalent
    to minimizing the original weighted deviation cost to second order.
    """

    Q: np.ndarray  # (T+1, 4, 4)
    q: np.ndarray  # (T+1, 4)
    R: np.ndarray  # (2, 2)
    r: np.ndarray  # (T, 2)
    x_ref: np.ndarray  # (T+1, 4), heading entry is a placeholder (zero weight)


def build_tracking_cost(traj, assignment: ReferenceAssignment, params) -> TrackingCost:
    horizon = traj.horizon
    tangents = assignment.tangents
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)

    Q = np.zeros((horizon + 1, 4, 4))
    Q[:, :2, :2] = params.w_lat * np.einsum("ti,tj->tij", normals, normals)
    Q[:, 3, 3] = params.w_vel

    x_ref = np.zeros((horizon + 1, 4))
    x_ref[:, :2] = assignment.points
    x_ref[:, 3] = params.v_ref

    q = 2.0 * np.einsum("tij,tj->ti", Q, traj.states - x_ref)

    R = np.diag([params.w_delta, params.w_acc])
    r = 2.0 * traj.inputs @ R
    return TrackingCost(Q=Q, q=q, R=R, r=r, x_ref=x_ref)


def path_tracking_cost(traj, path, params) -> float:
    """True (non-quadratic) tracking objective of one vehicle.

    Lateral deviation from the nearest waypoint's tangent line, speed
    deviation from v_ref, and the raw input magnitudes, with the same
    weights the quadratic model uses.  References are reassigned on the
    trajectory being evaluated.
    """
    assignment = assign_references(traj, path, params)
    tangents = assignment.tangents
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    offsets = traj.states[:, :2] - assignment.points
    lateral = np.einsum("ti,ti->t", normals, offsets)
    cost = params.w_lat * float(lateral @ lateral)
    dv = traj.states[:, 3] - params.v_ref
    cost += params.w_vel * float(dv @ dv)
    cost += params.w_delta * float(traj.inputs[:, 0] @ traj.inputs[:, 0])
    cost += params.w_acc * float(traj.inputs[:, 1] @ traj.inputs[:, 1])
    return cost


@dataclass
class VehicleBlocks:
    """One vehicle's nonzero coefficient blocks, grouped by timestep.

    Collision and boundary rows touch the state at one timestep each, and
    every timestep carries the same number of such rows (4*(N-1) collision
    + 2 boundary), so the blocks pack into dense (T+1, m, ...) arrays; the
    4 input rows per step pack into (T, 4, ...).  row indices point into
    the global canonical layout.
    """

    state_row_idx: np.ndarray  # (T+1, m) int
    state_coeff: np.ndarray  # (T+1, m, 4)
    input_row_idx: np.ndarray  # (T, 4) int
    input_coeff: np.ndarray  # (T, 4, 2)

    def product(self, dx: np.ndarray, du: np.ndarray, n: int) -> np.ndarray:
        """Scatter J_vehicle @ dX into a length-n vector."""
        out = np.zeros(n)
        vals = np.einsum("tmi,ti->tm", self.state_coeff, dx)
        out[self.state_row_idx.ravel()] += vals.ravel()
        vals_u = np.einsum("tmi,ti->tm", self.input_coeff, du)
        out[self.input_row_idx.ravel()] += vals_u.ravel()
        return out


@dataclass
class ConstraintSystem:
    """Stacked linear inequality system sum_i J_i dX_i + l >= 0.

    Coefficients live in per-vehicle dense blocks (see VehicleBlocks); the
    object-level row view is materialized on demand and costs O(n), so the
    solver never touches it.
    """

    layout: RowLayout
    l: np.ndarray  # (n,)
    blocks: tuple  # N VehicleBlocks
    _pair_i: np.ndarray = field(repr=False)
    _pair_j: np.ndarray = field(repr=False)
    _coll_normals: np.ndarray = field(repr=False)  # (P, 2, 2, T+1, 2)
    _bdry_normals: np.ndarray = field(repr=False)  # (N, 2, T+1, 2)
    _theta: np.ndarray = field(repr=False)  # (N, T+1)
    _biases: np.ndarray = field(repr=False)  # (d_f, d_r)

    @property
    def n(self) -> int:
        return self.layout.n

    def _state_coeff(self, nvec, vehicle, tau, circle) -> np.ndarray:
        nx, ny = nvec
        theta = self._theta[vehicle, tau]
        d_beta = self._biases[circle]
        return np.array(
            [nx, ny, d_beta * (-nx * np.sin(theta) + ny * np.cos(theta)), 0.0]
        )

    def row(self, k: int) -> LinearConstraintRow:
        """Decode global row k back into an object-level row."""
        layout = self.layout
        if k < 0 or k >= layout.n:
            raise IndexError(k)
        if k < layout.n_collision:
            per_tau = 4 * layout.n_pairs
            tau, rem = divmod(k, per_tau)
            pair, code = divmod(rem, 4)
            beta, gamma = divmod(code, 2)
            i = int(self._pair_i[pair])
            j = int(self._pair_j[pair])
            nvec = self._coll_normals[pair, beta, gamma, tau]
            return LinearConstraintRow(
                kind="collision",
                coefficients={
                    i: self._state_coeff(nvec, i, tau, beta),
                    j: -self._state_coeff(nvec, j, tau, gamma),
                },
                offset=float(self.l[k]),
                meta={
                    "tau": tau,
                    "vehicles": (i, j),
                    "circles": (CIRCLES[beta], CIRCLES[gamma]),
                    "normal": nvec,
                },
            )
        k2 = k - layout.n_collision
        if k2 < layout.n_boundary:
            per_tau = 2 * layout.n_vehicles
            tau, rem = divmod(k2, per_tau)
            i, beta = divmod(rem, 2)
            nvec = self._bdry_normals[i, beta, tau]
            return LinearConstraintRow(
                kind="boundary",
                coefficients={i: 2.0 * self._state_coeff(nvec, i, tau, beta)},
                offset=float(self.l[k]),
                meta={
                    "tau": tau,
                    "vehicles": (i,),
                    "circles": (CIRCLES[beta],),
                    "normal": nvec,
                },
            )
        k3 = k2 - layout.n_boundary
        per_tau = 4 * layout.n_vehicles
        tau, rem = divmod(k3, per_tau)
        i, kind = divmod(rem, 4)
        return LinearConstraintRow(
            kind="input_lower" if INPUT_KINDS[kind].endswith("lower") else "input_upper",
            coefficients={i: _INPUT_COEFF[kind].copy()},
            offset=float(self.l[k]),
            meta={"tau": tau, "vehicles": (i,), "channel": INPUT_KINDS[kind].split("_")[0]},
        )

    @property
    def rows(self) -> list:
        return [self.row(k) for k in range(self.layout.n)]

    def residual(self, deltas) -> np.ndarray:
        """l + sum_i J_i dX_i for per-vehicle (dx, du) pairs."""
        out = self.l.copy()
        for blocks, (dx, du) in zip(self.blocks, deltas):
            out += blocks.product(dx, du, self.layout.n)
        return out


def build_constraint_system(trajs, boundary, params) -> ConstraintSystem:
    """Stack all constraint rows around the nominal trajectories.

    Vectorized equivalent of concatenating geometry.collision_rows /
    boundary_rows / input_rows in the canonical global order; the
    object-level functions stay the reference implementation and the two
    are cross-checked in the test suite.
    """
    n_vehicles = len(trajs)
    horizon = trajs[0].horizon
    layout = RowLayout(n_vehicles=n_vehicles, horizon=horizon)
    states = np.stack([t.states for t in trajs])  # (N, T+1, 4)
    inputs = np.stack([t.inputs for t in trajs])  # (N, T, 2)
    theta = states[:, :, 2]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    biases = np.array([params.d_f, params.d_r])
    centers = centers_array(states, params).transpose(0, 2, 1, 3)  # (N, 2, T+1, 2)

    # -- collision rows ----------------------------------------------------
    if n_vehicles >= 2:
        pair_i, pair_j = np.triu_indices(n_vehicles, 1)
        diff = centers[pair_i][:, :, None] - centers[pair_j][:, None, :]  # (P,2,2,T+1,2)
        dist = np.linalg.norm(diff, axis=-1)
        if np.min(dist) < _MIN_SEPARATION:
            flat = int(np.argmin(dist))
            p, beta, gamma, tau = np.unravel_index(flat, dist.shape)
            raise DegenerateGeometryError(
                f"coincident circle centers: vehicles {pair_i[p]}/{pair_j[p]}, "
                f"circles {CIRCLES[beta]}/{CIRCLES[gamma]}, tau={tau}"
            )
        coll_normals = diff / dist[..., None]
        l_coll = (dist - params.d_safe).transpose(3, 0, 1, 2).reshape(-1)
    else:
        pair_i = pair_j = np.zeros(0, dtype=int)
        coll_normals = np.zeros((0, 2, 2, horizon + 1, 2))
        l_coll = np.zeros(0)

    # -- boundary rows ------------------------------------------------------
    queries = centers.reshape(-1, 2)
    nearest = boundary.index.points[boundary.index.query(queries)].reshape(centers.shape)
    diffb = centers - nearest
    distb = np.linalg.norm(diffb, axis=-1)  # (N, 2, T+1)
    if np.min(distb) < _MIN_SEPARATION:
        flat = int(np.argmin(distb))
        i, beta, tau = np.unravel_index(flat, distb.shape)
        raise DegenerateGeometryError(
            f"circle center on boundary sample: vehicle {i}, circle {CIRCLES[beta]}, tau={tau}"
        )
    bdry_normals = diffb / distb[..., None]
    l_bdry = (2.0 * distb - params.d_safe).transpose(2, 0, 1).reshape(-1)

    # -- input rows -----------------------------------------------------------
    delta, acc = inputs[..., 0], inputs[..., 1]
    l_input = np.stack(
        [
            acc - params.a_min,
            params.a_max - acc,
            delta - params.delta_min,
            params.delta_max - delta,
        ],
        axis=-1,
    ).transpose(1, 0, 2).reshape(-1)  # (T, N, 4) flattened

    l = np.concatenate([l_coll, l_bdry, l_input])

    # -- per-vehicle blocks ---------------------------------------------------
    taus = np.arange(horizon + 1)
    codes = np.arange(4)  # beta*2 + gamma
    blocks = []
    input_coeff = np.broadcast_to(_INPUT_COEFF, (horizon, 4, 2)).copy()
    for v in range(n_vehicles):
        parts_idx, parts_coeff = [], []
        for side, ids in (("i", np.nonzero(pair_i == v)[0]), ("j", np.nonzero(pair_j == v)[0])):
            if len(ids) == 0:
                continue
            nv = coll_normals[ids]  # (Pv, 2, 2, T+1, 2)
            # this vehicle's own circle is beta on the i side, gamma on the j side
            if side == "i":
                bias = biases[None, :, None, None]
            else:
                bias = biases[None, None, :, None]
            third = bias * (-nv[..., 0] * sin_t[v] + nv[..., 1] * cos_t[v])
            coeff = np.stack(
                [nv[..., 0], nv[..., 1], third, np.zeros_like(third)], axis=-1
            )
            if side == "j":
                coeff = -coeff
            coeff = coeff.transpose(3, 0, 1, 2, 4).reshape(horizon + 1, -1, 4)
            combo = (ids[:, None] * 4 + codes[None, :]).reshape(-1)
            idx = taus[:, None] * (4 * layout.n_pairs) + combo[None, :]
            parts_idx.append(idx)
            parts_coeff.append(coeff)

        third_b = biases[:, None] * (-bdry_normals[v, ..., 0] * sin_t[v] + bdry_normals[v, ..., 1] * cos_t[v])
        coeff_b = 2.0 * np.stack(
            [bdry_normals[v, ..., 0], bdry_normals[v, ..., 1], third_b, np.zeros_like(third_b)],
            axis=-1,
        )  # (2, T+1, 4)
        parts_coeff.append(coeff_b.transpose(1, 0, 2))
        idx_b = (
            layout.n_collision
            + taus[:, None] * (2 * n_vehicles)
            + v * 2
            + np.arange(2)[None, :]
        )
        parts_idx.append(idx_b)

        input_idx = (
            layout.n_collision
            + layout.n_boundary
            + np.arange(horizon)[:, None] * (4 * n_vehicles)
            + v * 4
            + codes[None, :]
        )
        blocks.append(
            VehicleBlocks(
                state_row_idx=np.concatenate(parts_idx, axis=1),
                state_coeff=np.concatenate(parts_coeff, axis=1),
                input_row_idx=input_idx,
                input_coeff=input_coeff,
            )
        )

    return ConstraintSystem(
        layout=layout,
        l=l,
        blocks=tuple(blocks),
        _pair_i=pair_i,
        _pair_j=pair_j,
        _coll_normals=coll_normals,
        _bdry_normals=bdry_normals,
        _theta=theta,
        _biases=biases,
    )
