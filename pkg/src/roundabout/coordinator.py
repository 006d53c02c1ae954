"""Outer-loop coordination of the cooperative solve.

Each outer iteration re-linearizes everything around the committed
nominal trajectories, runs k_max synchronized consensus rounds, and
commits a damped input-space update per vehicle:

    1. snapshot all nominal trajectories (the broadcast)
    2. per vehicle: dynamics Jacobians, circle geometry, nearest-neighbor
       references, tracking cost, stacked constraint rows
    3. reset p = s = 0, warm-start y and z from the previous iteration
    4. k_max consensus rounds (each an affine LQR solve per vehicle)
    5. per vehicle: clamp inputs + step, re-roll the nonlinear model,
       backtrack the step size until the true cost stops increasing

The loop terminates when the total tracking cost changes by less than
zeta between consecutive iterations AND the committed trajectories keep
every circle pair at least d_safe apart; hitting the iteration cap
instead yields a report with status "max_iterations", not an exception.

Per-vehicle work between synchronization points is independent, so it can
run on 1..N workers; worker processes exchange immutable snapshots
through shared memory and all cross-vehicle sums run in a fixed order,
making results bit-identical for every worker count.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import queue
import time
import traceback
from dataclasses import dataclass
from threading import BrokenBarrierError

import numpy as np

from .admm import AdmmConfig, AdmmWorkerState, VehicleContext, vehicle_round
from .convexify import (
    assign_references,
    build_constraint_system,
    build_tracking_cost,
    path_tracking_cost,
)
from .geometry import RowLayout, centers_array
from .kinematics import ControlInput, Trajectory, linearize_trajectory, rollout, step
from .pursuit import pure_pursuit_steer

__all__ = [
    "SolveReport",
    "initialize_trajectories",
    "update_trajectory",
    "min_circle_distance",
    "group_average_velocities",
    "solve",
]

_BARRIER_TIMEOUT = 600.0  # s; a stuck worker should fail loudly, not hang
_MIN_STEP = 1.0 / 16.0


@dataclass
class SolveReport:
    """Summary of one solve: status, cost history, and safety metrics."""

    status: str  # "converged" or "max_iterations"
    outer_iterations: int
    final_cost: float
    cost_trace: list
    min_pairwise_distance: float
    wall_time: float
    group_avg_velocity: dict
    workers: int
    n_vehicles: int
    horizon: int

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def initialize_trajectories(scenario) -> list:
    """Constant-speed pure-pursuit rollouts, one per vehicle.

    Dynamically feasible by construction; steering is clamped to its box,
    so only a rollout domain failure can raise.
    """
    params = scenario.params
    horizon = params.horizon_T
    out = []
    for x0, path, _ in scenario.vehicles:
        states = np.empty((horizon + 1, 4))
        inputs = np.empty((horizon, 2))
        x = x0
        states[0] = x.as_array()
        for tau in range(horizon):
            delta = pure_pursuit_steer(x, path, params)
            inputs[tau] = (delta, 0.0)
            x = step(x, ControlInput(delta, 0.0), params)
            states[tau + 1] = x.as_array()
        out.append(Trajectory(states=states, inputs=inputs))
    return out


def update_trajectory(nominal: Trajectory, dx, du, path, params) -> Trajectory:
    """Commit a damped input update and re-roll the nonlinear model.

    States are never set to nominal + dx directly; the updated inputs are
    clamped to their boxes and rolled out from the fixed initial state so
    the committed nominal stays exactly dynamically feasible.  The step
    size starts at 1 and halves while the true tracking cost exceeds the
    nominal's; the minimum step 1/16 is accepted unconditionally.
    """
    del dx  # states come from re-rolling the inputs
    base_cost = path_tracking_cost(nominal, path, params)
    x0 = nominal.state_at(0)
    lo = np.array([params.delta_min, params.a_min])
    hi = np.array([params.delta_max, params.a_max])
    alpha = 1.0
    while True:
        candidate_inputs = np.clip(nominal.inputs + alpha * np.asarray(du), lo, hi)
        candidate = rollout(x0, candidate_inputs, params)
        if alpha <= _MIN_STEP or path_tracking_cost(candidate, path, params) <= base_cost:
            return candidate
        alpha *= 0.5


def min_circle_distance(trajs, params) -> float:
    """Minimum center distance over all circle pairs and timesteps."""
    n_vehicles = len(trajs)
    if n_vehicles < 2:
        return math.inf
    states = np.stack([t.states for t in trajs])
    centers = centers_array(states, params).transpose(0, 2, 1, 3)  # (N, 2, T+1, 2)
    pair_i, pair_j = np.triu_indices(n_vehicles, 1)
    diff = centers[pair_i][:, :, None] - centers[pair_j][:, None, :]
    return float(np.min(np.linalg.norm(diff, axis=-1)))


def group_average_velocities(trajs, groups) -> dict:
    """Mean speed over the horizon, averaged per entrance group."""
    out = {}
    for group in sorted(set(groups)):
        speeds = [float(np.mean(t.states[:, 3])) for t, g in zip(trajs, groups) if g == group]
        out[group] = float(np.mean(speeds))
    return out


class _VehicleRuntime:
    """Persistent per-vehicle solver state across outer iterations."""

    def __init__(self, vehicle: int, scenario):
        self.vehicle = vehicle
        self.params = scenario.params
        self.path = scenario.vehicles[vehicle][1]
        layout = RowLayout(scenario.n_vehicles, scenario.params.horizon_T)
        self.admm_state = AdmmWorkerState.zeros(layout.n)
        self.ctx = None
        self.traj = None
        self.last_solution = None

    def prepare(self, trajs, system) -> None:
        self.traj = trajs[self.vehicle]
        dynamics = linearize_trajectory(self.traj, self.params)
        assignment = assign_references(self.traj, self.path, self.params)
        tracking = build_tracking_cost(self.traj, assignment, self.params)
        self.admm_state.warm_restart()
        self.last_solution = None
        self.ctx = VehicleContext(
            vehicle=self.vehicle,
            state=self.admm_state,
            tracking=tracking,
            system=system,
            dynamics=dynamics,
        )

    def run_round(self, y_all, cfg) -> None:
        self.last_solution = vehicle_round(self.ctx, y_all, cfg)

    def commit(self):
        sol = self.last_solution
        new_traj = update_trajectory(self.traj, sol.dx, sol.du, self.path, self.params)
        cost = path_tracking_cost(new_traj, self.path, self.params)
        return new_traj, cost


class _InlineExecutor:
    """Single-threaded executor; the reference for bit-exact results."""

    def __init__(self, scenario, cfg: AdmmConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.runtimes = [_VehicleRuntime(v, scenario) for v in range(scenario.n_vehicles)]

    def outer_iteration(self, trajs):
        system = build_constraint_system(trajs, self.scenario.boundary, self.scenario.params)
        for rt in self.runtimes:
            rt.prepare(trajs, system)
        for _ in range(self.scenario.params.k_max):
            y_all = np.stack([rt.admm_state.y for rt in self.runtimes])
            for rt in self.runtimes:
                rt.run_round(y_all, self.cfg)
        new_trajs, costs = [], np.empty(len(self.runtimes))
        for rt in self.runtimes:
            traj, cost = rt.commit()
            new_trajs.append(traj)
            costs[rt.vehicle] = cost
        return new_trajs, costs

    def close(self) -> None:
        pass


def _worker_main(scenario, cfg, vehicle_ids, buffers, barrier, flag, err_queue):
    """Worker process: owns a fixed slice of vehicles across all phases."""
    try:
        params = scenario.params
        n_vehicles = scenario.n_vehicles
        states_buf, inputs_buf, y_buf, costs_buf = _views(buffers, scenario)
        runtimes = {v: _VehicleRuntime(v, scenario) for v in vehicle_ids}
        while True:
            barrier.wait(_BARRIER_TIMEOUT)  # A: outer iteration gate
            if flag.value == 0:
                return
            trajs = [
                Trajectory(states=states_buf[v].copy(), inputs=inputs_buf[v].copy())
                for v in range(n_vehicles)
            ]
            system = build_constraint_system(trajs, scenario.boundary, params)
            for v in vehicle_ids:
                runtimes[v].prepare(trajs, system)
            for _ in range(params.k_max):
                for v in vehicle_ids:
                    y_buf[v] = runtimes[v].admm_state.y
                barrier.wait(_BARRIER_TIMEOUT)  # B: broadcast published
                y_all = y_buf.copy()
                for v in vehicle_ids:
                    runtimes[v].run_round(y_all, cfg)
                barrier.wait(_BARRIER_TIMEOUT)  # C: round complete
            for v in vehicle_ids:
                traj, cost = runtimes[v].commit()
                states_buf[v] = traj.states
                inputs_buf[v] = traj.inputs
                costs_buf[v] = cost
            barrier.wait(_BARRIER_TIMEOUT)  # D: commits published
    except Exception:
        err_queue.put(traceback.format_exc())
        barrier.abort()


def _views(buffers, scenario):
    n = scenario.n_vehicles
    horizon = scenario.params.horizon_T
    layout = RowLayout(n, horizon)
    states_raw, inputs_raw, y_raw, costs_raw = buffers
    states = np.frombuffer(states_raw).reshape(n, horizon + 1, 4)
    inputs = np.frombuffer(inputs_raw).reshape(n, horizon, 2)
    y = np.frombuffer(y_raw).reshape(n, layout.n)
    costs = np.frombuffer(costs_raw)
    return states, inputs, y, costs


class _ProcessExecutor:
    """Persistent worker pool exchanging snapshots through shared memory."""

    def __init__(self, scenario, cfg: AdmmConfig, workers: int):
        self.scenario = scenario
        self.cfg = cfg
        n = scenario.n_vehicles
        horizon = scenario.params.horizon_T
        layout = RowLayout(n, horizon)
        try:
            ctx = mp.get_context("fork")
        except ValueError:  # non-POSIX fallback; scenario then travels by pickle
            ctx = mp.get_context()
        self._buffers = (
            ctx.RawArray("d", n * (horizon + 1) * 4),
            ctx.RawArray("d", n * horizon * 2),
            ctx.RawArray("d", n * layout.n),
            ctx.RawArray("d", n),
        )
        self.views = _views(self._buffers, scenario)
        self.barrier = ctx.Barrier(workers + 1)
        self.flag = ctx.Value("i", 1)
        self.err_queue = ctx.Queue()
        chunks = np.array_split(np.arange(n), workers)
        self.procs = [
            ctx.Process(
                target=_worker_main,
                args=(scenario, cfg, list(chunk), self._buffers, self.barrier, self.flag, self.err_queue),
                daemon=True,
            )
            for chunk in chunks
        ]
        for proc in self.procs:
            proc.start()

    def _wait(self) -> None:
        try:
            self.barrier.wait(_BARRIER_TIMEOUT)
        except BrokenBarrierError:
            try:
                detail = self.err_queue.get(timeout=1.0)
            except queue.Empty:
                detail = "barrier broken without a recorded error"
            self.close(force=True)
            raise RuntimeError(f"worker failed:\n{detail}") from None

    def outer_iteration(self, trajs):
        states_buf, inputs_buf, _, costs_buf = self.views
        for v, traj in enumerate(trajs):
            states_buf[v] = traj.states
            inputs_buf[v] = traj.inputs
        self.flag.value = 1
        self._wait()  # A
        for _ in range(self.scenario.params.k_max):
            self._wait()  # B
            self._wait()  # C
        self._wait()  # D
        new_trajs = [
            Trajectory(states=states_buf[v].copy(), inputs=inputs_buf[v].copy())
            for v in range(self.scenario.n_vehicles)
        ]
        return new_trajs, costs_buf.copy()

    def close(self, force: bool = False) -> None:
        if not self.procs:
            return
        if not force:
            self.flag.value = 0
            try:
                self.barrier.wait(5.0)
            except BrokenBarrierError:
                pass
        for proc in self.procs:
            proc.join(timeout=5.0)
            if proc.is_alive():
                proc.terminate()
        self.procs = []


def solve(scenario, workers: int = 1, max_outer: int | None = None):
    """Run the full cooperative solve.

    Returns (trajectories, SolveReport); non-convergence is reported in
    the status field, never raised.
    """
    t_start = time.perf_counter()
    params = scenario.params
    n_vehicles = scenario.n_vehicles
    workers = max(1, min(int(workers), n_vehicles))
    cap = int(max_outer) if max_outer is not None else params.max_outer_iters
    cfg = AdmmConfig.from_params(params, n_vehicles)

    trajs = initialize_trajectories(scenario)
    paths = [path for _, path, _ in scenario.vehicles]
    trace = [float(sum(path_tracking_cost(t, p, params) for t, p in zip(trajs, paths)))]

    executor = (
        _InlineExecutor(scenario, cfg)
        if workers == 1
        else _ProcessExecutor(scenario, cfg, workers)
    )
    status = "max_iterations"
    iterations = 0
    try:
        for _ in range(cap):
            trajs, costs = executor.outer_iteration(trajs)
            iterations += 1
            trace.append(float(np.sum(costs)))
            distance = min_circle_distance(trajs, params)
            if abs(trace[-1] - trace[-2]) < params.zeta and distance >= params.d_safe:
                status = "converged"
                break
    finally:
        executor.close()

    report = SolveReport(
        status=status,
        outer_iterations=iterations,
        final_cost=trace[-1],
        cost_trace=trace,
        min_pairwise_distance=min_circle_distance(trajs, params),
        wall_time=time.perf_counter() - t_start,
        group_avg_velocity=group_average_velocities(trajs, scenario.groups()),
        workers=workers,
        n_vehicles=n_vehicles,
        horizon=params.horizon_T,
    )
    return trajs, report
