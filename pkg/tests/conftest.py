"""Shared fixtures and instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from roundabout.convexify import assign_references, build_constraint_system, build_tracking_cost
from roundabout.kinematics import Trajectory, VehicleState, linearize_trajectory, rollout
from roundabout.scenario import BoundaryCloud, ReferencePath, Scenario, SolverParams


def make_params(**overrides) -> SolverParams:
    return SolverParams(**overrides)


def far_boundary(params, half_width: float = 50.0) -> BoundaryCloud:
    """A wide straight corridor whose rows stay comfortably slack."""
    return BoundaryCloud.from_polylines(
        [
            [[-200.0, -half_width], [400.0, -half_width]],
            [[-200.0, half_width], [400.0, half_width]],
        ],
        params.max_gap,
    )


def straight_path(y: float, params, x0: float = -30.0, x1: float = 400.0) -> ReferencePath:
    return ReferencePath.from_polyline([[x0, y], [x1, y]], params.max_gap)


def convexified_pair(rng, params, gap: float = 3.2, path_gap: float = 2.0):
    """Random N=2 instance whose optimum squeezes the pair onto an active
    separation constraint while dX = 0 stays strictly feasible.

    Returns (trajs, paths, boundary, system, trackings, dynamics).
    """
    horizon = params.horizon_T
    paths = [straight_path(0.0, params), straight_path(path_gap, params)]
    boundary = far_boundary(params)
    u0 = rng.uniform([-0.03, -0.5], [0.03, 0.5], (horizon, 2))
    u1 = rng.uniform([-0.03, -0.5], [0.03, 0.5], (horizon, 2))
    lateral = 0.5 * (gap - path_gap)
    t0 = rollout(VehicleState(0.0, -lateral, 0.0, float(rng.uniform(9.5, 10.0))), u0, params)
    t1 = rollout(
        VehicleState(float(rng.uniform(0.0, 0.5)), path_gap + lateral, 0.0, float(rng.uniform(10.0, 10.5))),
        u1,
        params,
    )
    trajs = [t0, t1]
    system = build_constraint_system(trajs, boundary, params)
    trackings = [
        build_tracking_cost(t, assign_references(t, p, params), params)
        for t, p in zip(trajs, paths)
    ]
    dynamics = [linearize_trajectory(t, params) for t in trajs]
    return trajs, paths, boundary, system, trackings, dynamics


def random_affine_lqr(rng, horizon: int):
    """Random well-posed affine LQR instance (H psd, G pd, mild dynamics)."""
    from roundabout.lqr import AffineLqrProblem

    H = np.empty((horizon + 1, 4, 4))
    for tau in range(horizon + 1):
        M = rng.normal(size=(4, 4))
        H[tau] = M @ M.T * 0.1
    h = rng.normal(size=(horizon + 1, 4))
    G = np.empty((horizon, 2, 2))
    for tau in range(horizon):
        M = rng.normal(size=(2, 2))
        G[tau] = M @ M.T * 0.1 + 0.5 * np.eye(2)
    g = rng.normal(size=(horizon, 2))
    A = np.broadcast_to(np.eye(4), (horizon, 4, 4)) + 0.1 * rng.normal(size=(horizon, 4, 4))
    B = 0.3 * rng.normal(size=(horizon, 4, 2))
    return AffineLqrProblem(H=H, h=h, G=G, g=g, A=A.copy(), B=B)


@pytest.fixture
def params() -> SolverParams:
    return make_params()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
