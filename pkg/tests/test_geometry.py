"""Circle geometry, constraint row construction, and the canonical layout."""

import math

import numpy as np
import pytest

from roundabout.geometry import (
    DegenerateGeometryError,
    RowLayout,
    boundary_rows,
    centers_array,
    circle_centers,
    collision_rows,
    input_rows,
    position_jacobian,
)
from roundabout.kinematics import Trajectory, VehicleState, rollout
from roundabout.scenario import BoundaryCloud

from conftest import far_boundary, make_params


def straight_traj(params, x0=0.0, y0=0.0, theta=0.0, v=10.0, horizon=None):
    horizon = horizon if horizon is not None else params.horizon_T
    return rollout(VehicleState(x0, y0, theta, v), np.zeros((horizon, 2)), params)


class TestCircleCenters:
    def test_axis_aligned_placement(self):
        params = make_params()
        pair = circle_centers(VehicleState(0.0, 0.0, 0.0, 5.0), params)
        assert np.allclose(pair.p_f, [2.79, 0.0])
        assert np.allclose(pair.p_r, [-0.05, 0.0])

    def test_rotated_placement(self):
        params = make_params()
        pair = circle_centers(VehicleState(0.0, 0.0, math.pi / 2, 5.0), params)
        assert np.allclose(pair.p_f, [0.0, 2.79], atol=1e-12)

    def test_zero_bias_center_is_rear_axle(self):
        params = make_params(d_f=0.0, d_r=0.0)
        pair = circle_centers(VehicleState(3.0, -4.0, 1.0, 5.0), params)
        assert np.allclose(pair.p_f, [3.0, -4.0])
        assert np.allclose(pair.p_r, [3.0, -4.0])

    def test_centers_array_matches_scalar(self, rng):
        params = make_params()
        states = rng.normal(size=(3, 7, 4))
        arr = centers_array(states, params)  # (3, 7, 2, 2)
        for i in range(3):
            for tau in range(7):
                pair = circle_centers(VehicleState(*states[i, tau]), params)
                assert np.allclose(arr[i, tau, 0], pair.p_f, atol=1e-14)
                assert np.allclose(arr[i, tau, 1], pair.p_r, atol=1e-14)


class TestPositionJacobian:
    def test_zero_heading(self):
        J = position_jacobian(0.0, 2.79)
        assert np.allclose(J, [[1, 0, 0, 0], [0, 1, 2.79, 0]])

    def test_zero_bias(self):
        J = position_jacobian(1.2, 0.0)
        assert np.allclose(J, [[1, 0, 0, 0], [0, 1, 0, 0]])

    def test_matches_finite_difference_of_centers(self, rng):
        params = make_params()
        h = 1e-6
        for _ in range(20):
            state = rng.normal(size=4)
            for circle, bias in ((0, params.d_f), (1, params.d_r)):
                J = position_jacobian(state[2], bias)
                J_fd = np.empty((2, 4))
                for k in range(4):
                    hi, lo = state.copy(), state.copy()
                    hi[k] += h
                    lo[k] -= h
                    J_fd[:, k] = (
                        centers_array(hi, params)[circle] - centers_array(lo, params)[circle]
                    ) / (2 * h)
                assert np.allclose(J, J_fd, atol=1e-6)


class TestCollisionRows:
    def test_two_vehicle_front_front_row(self):
        params = make_params()
        trajs = [straight_traj(params, 0.0, horizon=0), straight_traj(params, 5.0, horizon=0)]
        rows = collision_rows(trajs, params)
        assert len(rows) == 4  # one pair, four circle combos, one timestep
        ff = rows[0]
        assert ff.meta["circles"] == ("f", "f")
        # centers at (2.79, 0) and (7.79, 0): distance 5, offset 5 - 2.62
        assert ff.offset == pytest.approx(5.0 - 2.62, abs=1e-12)
        assert np.allclose(ff.meta["normal"], [-1.0, 0.0])

    def test_equal_translation_cancels(self, rng):
        params = make_params()
        trajs = [
            straight_traj(params, 0.0, 0.0, horizon=3),
            straight_traj(params, 10.0, 4.0, horizon=3),
        ]
        rows = collision_rows(trajs, params)
        shift = np.array([0.7, -0.3, 0.0, 0.0])  # pure position shift
        for row in rows:
            (i, ci), (j, cj) = sorted(row.coefficients.items())
            assert ci @ shift + cj @ shift == pytest.approx(0.0, abs=1e-12)

    def test_row_count_matches_formula(self):
        params = make_params()
        trajs = [
            straight_traj(params, 0.0, 0.0, horizon=2),
            straight_traj(params, 12.0, 0.0, horizon=2),
            straight_traj(params, 0.0, 12.0, horizon=2),
        ]
        rows = collision_rows(trajs, params)
        assert len(rows) == 3 * 4 * 3  # pairs * circle combos * timesteps

    def test_coincident_centers_raise(self):
        params = make_params()
        trajs = [straight_traj(params, 0.0, horizon=0), straight_traj(params, 0.0, horizon=0)]
        with pytest.raises(DegenerateGeometryError):
            collision_rows(trajs, params)

    def test_canonical_order(self):
        params = make_params()
        layout = RowLayout(n_vehicles=3, horizon=2)
        trajs = [
            straight_traj(params, 0.0, 0.0, horizon=2),
            straight_traj(params, 12.0, 0.0, horizon=2),
            straight_traj(params, 0.0, 12.0, horizon=2),
        ]
        rows = collision_rows(trajs, params)
        for k, row in enumerate(rows):
            i, j = row.meta["vehicles"]
            beta = 0 if row.meta["circles"][0] == "f" else 1
            gamma = 0 if row.meta["circles"][1] == "f" else 1
            assert layout.collision_row(row.meta["tau"], i, j, beta, gamma) == k


class TestBoundaryRows:
    def test_active_at_half_safe_distance(self):
        params = make_params()
        # rear circle center exactly d_safe/2 above the wall at y = -d
        d = params.d_safe / 2
        cloud = BoundaryCloud.from_polylines([[[-50.0, -d], [50.0, -d]]], params.max_gap)
        traj = Trajectory(states=np.array([[0.05, 0.0, 0.0, 5.0]]), inputs=np.zeros((0, 2)))
        rows = boundary_rows(traj, cloud, params)
        rear = [r for r in rows if r.meta["circles"] == ("r",)][0]
        assert rear.offset == pytest.approx(0.0, abs=1e-9)

    def test_offset_formula(self):
        params = make_params()
        cloud = BoundaryCloud.from_polylines([[[-50.0, -3.0], [50.0, -3.0]]], params.max_gap)
        traj = Trajectory(states=np.array([[0.05, 0.0, 0.0, 5.0]]), inputs=np.zeros((0, 2)))
        rows = boundary_rows(traj, cloud, params)
        rear = [r for r in rows if r.meta["circles"] == ("r",)][0]
        assert rear.offset == pytest.approx(2.0 * 3.0 - 2.62, abs=1e-9)

    def test_row_count(self):
        params = make_params(horizon_T=75)
        traj = straight_traj(params, horizon=75)
        rows = boundary_rows(traj, far_boundary(params), params)
        assert len(rows) == 2 * 76


class TestInputRows:
    def test_upper_row_at_zero_nominal(self):
        params = make_params()
        traj = straight_traj(params, horizon=1)
        rows = input_rows(traj, params)
        a_upper = rows[1]
        assert a_upper.kind == "input_upper"
        assert a_upper.offset == pytest.approx(8.0)
        assert np.allclose(a_upper.coefficients[0], [0.0, -1.0])

    def test_active_upper_bound(self):
        params = make_params()
        traj = Trajectory(
            states=np.array([[0.0, 0.0, 0.0, 10.0], [1.0, 0.0, 0.0, 10.8]]),
            inputs=np.array([[0.0, params.a_max]]),
        )
        rows = input_rows(traj, params)
        assert rows[1].offset == pytest.approx(0.0)

    def test_row_count(self):
        params = make_params(horizon_T=75)
        traj = straight_traj(params, horizon=75)
        assert len(input_rows(traj, params)) == 4 * 75


class TestRowLayout:
    def test_total_count_formula(self):
        layout = RowLayout(n_vehicles=16, horizon=75)
        n, t = 16, 75
        assert layout.n == 4 * (n * (n - 1) // 2) * (t + 1) + 2 * n * (t + 1) + 4 * n * t

    def test_indices_are_a_bijection(self):
        layout = RowLayout(n_vehicles=3, horizon=2)
        seen = set()
        for tau in range(3):
            for i in range(3):
                for j in range(i + 1, 3):
                    for beta in range(2):
                        for gamma in range(2):
                            seen.add(layout.collision_row(tau, i, j, beta, gamma))
        for tau in range(3):
            for i in range(3):
                for beta in range(2):
                    seen.add(layout.boundary_row(tau, i, beta))
        for tau in range(2):
            for i in range(3):
                for kind in range(4):
                    seen.add(layout.input_row(tau, i, kind))
        assert seen == set(range(layout.n))


class TestLinearizationSoundness:
    def test_unit_normals(self, rng):
        params = make_params()
        trajs = [
            rollout(VehicleState(0, 0, 0.3, 9.0), rng.uniform(-0.1, 0.1, (4, 2)), params),
            rollout(VehicleState(9, 3, -0.5, 10.0), rng.uniform(-0.1, 0.1, (4, 2)), params),
        ]
        for row in collision_rows(trajs, params):
            assert np.linalg.norm(row.meta["normal"]) == pytest.approx(1.0, abs=1e-9)
        for row in boundary_rows(trajs[0], far_boundary(params), params):
            assert np.linalg.norm(row.meta["normal"]) == pytest.approx(1.0, abs=1e-9)

    def test_zero_variation_value_is_distance_minus_safe(self, rng):
        params = make_params()
        trajs = [
            rollout(VehicleState(0, 0, 0.0, 9.0), rng.uniform(-0.05, 0.05, (3, 2)), params),
            rollout(VehicleState(11, 2, 0.1, 10.0), rng.uniform(-0.05, 0.05, (3, 2)), params),
        ]
        rows = collision_rows(trajs, params)
        for row in rows:
            assert row.value({}) == row.offset
            assert row.offset > 0  # nominal is collision-free here

    def test_linear_model_underestimates_distance_gain(self, rng):
        # small-step soundness: true post-perturbation distance is never
        # more than 1e-3 below the linear-model prediction.  Heading
        # perturbations are kept at the scale damped solver steps produce;
        # the circle-center linearization error grows as d_beta*dtheta^2/2,
        # so the 1e-3 slack presumes small heading changes.
        params = make_params()

        def draw():
            dx = rng.uniform(-1, 1, 4)
            dx *= 0.1 / max(1.0, float(np.linalg.norm(dx)))
            dx[2] = float(rng.uniform(-0.015, 0.015))
            return dx

        for _ in range(200):
            xi = rng.uniform([-5, -5, -np.pi, 5], [5, 5, np.pi, 12])
            xj = xi + rng.uniform([3.0, 3.0, -1.0, -2.0], [8.0, 8.0, 1.0, 2.0])
            ti = Trajectory(states=xi[None, :], inputs=np.zeros((0, 2)))
            tj = Trajectory(states=xj[None, :], inputs=np.zeros((0, 2)))
            rows = collision_rows([ti, tj], params)
            dxi = draw()
            dxj = draw()
            new_ci = centers_array(xi + dxi, params)
            new_cj = centers_array(xj + dxj, params)
            for row in rows:
                beta = 0 if row.meta["circles"][0] == "f" else 1
                gamma = 0 if row.meta["circles"][1] == "f" else 1
                true_dist = np.linalg.norm(new_ci[beta] - new_cj[gamma])
                predicted = row.value({0: dxi, 1: dxj}) + params.d_safe
                assert true_dist >= predicted - 1e-3
