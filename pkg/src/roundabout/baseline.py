"""Rule-based comparison policy: pure pursuit plus threshold braking.

Each vehicle tracks its reference path with pure-pursuit steering and a
proportional speed controller toward v_ref, but slams on a fixed brake
whenever any other vehicle's circle center sits within brake_distance in
a +/-60 degree cone ahead.  The policy is memoryless: inputs depend only
on the current joint state, so closed-loop runs are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import centers_array
from .kinematics import ControlInput, Trajectory, step
from .pursuit import pure_pursuit_steer

__all__ = ["BaselineConfig", "baseline_step", "simulate_baseline"]

_CONE_HALF_ANGLE = math.pi / 3.0


@dataclass(frozen=True)
class BaselineConfig:
    lookahead: float = 5.0  # m
    brake_distance: float = 10.0  # m
    a_brake: float = -6.0  # m/s^2, must be braking but within bounds
    a_cruise: float = 1.0  # 1/s gain toward v_ref

    def validate(self, params) -> None:
        if not self.brake_distance > params.d_safe:
            raise ValueError("brake_distance must exceed d_safe")
        if not (params.a_min <= self.a_brake < 0.0):
            raise ValueError("a_brake must lie in [a_min, 0)")


def _vehicle_ahead(ego, others_centers, brake_distance: float) -> bool:
    """Any circle center within the braking cone ahead of the ego pose."""
    rel = others_centers - np.array([ego.px, ego.py])
    dist = np.linalg.norm(rel, axis=-1)
    close = dist <= brake_distance
    if not np.any(close):
        return False
    bearing = np.arctan2(rel[close, 1], rel[close, 0]) - ego.theta
    bearing = (bearing + math.pi) % (2.0 * math.pi) - math.pi
    return bool(np.any(np.abs(bearing) <= _CONE_HALF_ANGLE))


def baseline_step(states, paths, config: BaselineConfig, params) -> list:
    """Inputs for every vehicle given the current joint state."""
    centers = centers_array(
        np.array([[s.px, s.py, s.theta, s.v] for s in states]), params
    )  # (N, 2, 2)
    inputs = []
    for i, (state, path) in enumerate(zip(states, paths)):
        delta = pure_pursuit_steer(state, path, params, lookahead=config.lookahead)
        others = np.delete(centers, i, axis=0).reshape(-1, 2)
        if len(others) and _vehicle_ahead(state, others, config.brake_distance):
            a = config.a_brake
        else:
            a = config.a_cruise * (params.v_ref - state.v)
        a = float(np.clip(a, params.a_min, params.a_max))
        inputs.append(ControlInput(delta=delta, a=a))
    return inputs


def simulate_baseline(scenario, config: BaselineConfig | None = None) -> list:
    """Closed-loop rollout of the rule-based policy over the horizon."""
    config = config or BaselineConfig()
    params = scenario.params
    config.validate(params)
    horizon = params.horizon_T
    paths = [path for _, path, _ in scenario.vehicles]
    states = [x0 for x0, _, _ in scenario.vehicles]

    all_states = np.empty((len(states), horizon + 1, 4))
    all_inputs = np.empty((len(states), horizon, 2))
    for i, s in enumerate(states):
        all_states[i, 0] = s.as_array()
    for tau in range(horizon):
        inputs = baseline_step(states, paths, config, params)
        for i, (s, u) in enumerate(zip(states, inputs)):
            all_inputs[i, tau] = (u.delta, u.a)
            states[i] = step(s, u, params)
            all_states[i, tau + 1] = states[i].as_array()
    return [
        Trajectory(states=all_states[i], inputs=all_inputs[i])
        for i in range(len(states))
    ]
