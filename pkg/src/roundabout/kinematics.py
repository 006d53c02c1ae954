"""Discrete-time kinematic bicycle model and its analytic linearization.

State is (px, py, theta, v) with position measured at the midpoint of the
rear axle; inputs are (delta, a) = steering angle and acceleration.  One
step covers the sampling interval tau_s:

    px'    = px + f_r(v, delta) * cos(theta)
    py'    = py + f_r(v, delta) * sin(theta)
    theta' = theta + arcsin(tau_s * v * sin(delta) / b)
    v'     = v + tau_s * a

with f_r(v, delta) = b + tau_s*v*cos(delta) - sqrt(b^2 - (tau_s*v*sin(delta))^2).
The model is only valid while |tau_s * v * sin(delta)| stays below the
wheelbase b; propagation rejects states outside 0.999*b instead of clamping,
so a nominal trajectory can never silently drift out of the regime where the
linearization is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "VehicleState",
    "ControlInput",
    "LinearizedDynamics",
    "Trajectory",
    "ModelDomainError",
    "f_r",
    "step",
    "rollout",
    "linearize",
    "linearize_trajectory",
]

# Fraction of the wheelbase the sine term may reach before propagation is
# rejected; keeps the sqrt/arcsin Jacobians bounded.
_DOMAIN_MARGIN = 0.999


class ModelDomainError(ValueError):
    """Raised when |tau_s * v * sin(delta)| exceeds the model validity bound."""


@dataclass(frozen=True)
class VehicleState:
    """Rear-axle pose and speed: (px, py, theta, v)."""

    px: float
    py: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta, self.v])


@dataclass(frozen=True)
class ControlInput:
    """Steering angle (rad) and acceleration (m/s^2)."""

    delta: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.a])


@dataclass(frozen=True)
class LinearizedDynamics:
    """First-order model x' ~ x + A @ dx + B @ du around a nominal point."""

    A: np.ndarray  # (4, 4)
    B: np.ndarray  # (4, 2)


@dataclass
class Trajectory:
    """Nominal trajectory: T+1 states stacked over T inputs.

    states has shape (T+1, 4) in (px, py, theta, v) order, inputs has shape
    (T, 2) in (delta, a) order.  Rows of states beyond index 0 are expected
    to be the exact rollout of inputs from states[0].
    """

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 4:
            raise ValueError("states must have shape (T+1, 4)")
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 2:
            raise ValueError("inputs must have shape (T, 2)")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("need exactly one more state than inputs")

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def state_at(self, tau: int) -> VehicleState:
        px, py, theta, v = self.states[tau]
        return VehicleState(px, py, theta, v)

    def input_at(self, tau: int) -> ControlInput:
        delta, a = self.inputs[tau]
        return ControlInput(delta, a)


def _radicand(v: float, delta: float, params) -> float:
    b = params.wheelbase_b
    w = params.tau_s * v * math.sin(delta)
    if abs(w) > _DOMAIN_MARGIN * b:
        raise ModelDomainError(
            f"|tau_s*v*sin(delta)| = {abs(w):.6g} exceeds {_DOMAIN_MARGIN}*b = "
            f"{_DOMAIN_MARGIN * b:.6g} (v={v:.6g}, delta={delta:.6g})"
        )
    return b * b - w * w


def f_r(v: float, delta: float, params) -> float:
    """Per-step travel of the rear axle along the current heading."""
    b = params.wheelbase_b
    rad = _radicand(v, delta, params)
    return b + params.tau_s * v * math.cos(delta) - math.sqrt(rad)


def step(x: VehicleState, u: ControlInput, params) -> VehicleState:
    """Propagate one state through one sampling interval."""
    b = params.wheelbase_b
    fr = f_r(x.v, u.delta, params)
    sin_arg = params.tau_s * x.v * math.sin(u.delta) / b
    return VehicleState(
        px=x.px + fr * math.cos(x.theta),
        py=x.py + fr * math.sin(x.theta),
        theta=x.theta + math.asin(sin_arg),
        v=x.v + params.tau_s * u.a,
    )


def rollout(x0: VehicleState, inputs: np.ndarray, params) -> Trajectory:
    """Roll a (T, 2) input sequence forward from x0.

    Raises ModelDomainError annotated with the offending timestamp if any
    intermediate state leaves the model's validity region.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != 2:
        raise ValueError("inputs must have shape (T, 2)")
    horizon = inputs.shape[0]
    states = np.empty((horizon + 1, 4))
    x = x0
    states[0] = x.as_array()
    for tau in range(horizon):
        try:
            x = step(x, ControlInput(inputs[tau, 0], inputs[tau, 1]), params)
        except ModelDomainError as err:
            raise ModelDomainError(f"at timestamp {tau}: {err}") from err
        states[tau + 1] = x.as_array()
    return Trajectory(states=states, inputs=inputs.copy())


def linearize(x: VehicleState, u: ControlInput, params) -> LinearizedDynamics:
    """Analytic Jacobians A = df/dx, B = df/du at (x, u).

    Validated against central finite differences in the test suite; the
    sqrt/arcsin terms make the entries unbounded at the domain boundary, so
    the same validity guard as step() applies.
    """
    b = params.wheelbase_b
    ts = params.tau_s
    rad = _radicand(x.v, u.delta, params)
    g = math.sqrt(rad)

    sd, cd = math.sin(u.delta), math.cos(u.delta)
    st, ct = math.sin(x.theta), math.cos(x.theta)
    w = ts * x.v  # per-step path increment scale

    fr = b + w * cd - g
    dfr_dv = ts * cd + w * sd * sd * ts / g
    dfr_dd = -w * sd + w * w * sd * cd / g

    A = np.eye(4)
    A[0, 2] = -fr * st
    A[0, 3] = dfr_dv * ct
    A[1, 2] = fr * ct
    A[1, 3] = dfr_dv * st
    A[2, 3] = ts * sd / g

    B = np.zeros((4, 2))
    B[0, 0] = dfr_dd * ct
    B[1, 0] = dfr_dd * st
    B[2, 0] = w * cd / g
    B[3, 1] = ts

    return LinearizedDynamics(A=A, B=B)


def linearize_trajectory(traj: Trajectory, params) -> tuple:
    """Jacobians along a whole trajectory: (T, 4, 4) and (T, 4, 2) stacks.

    Vectorized twin of linearize(); the two are cross-checked in tests.
    """
    b = params.wheelbase_b
    ts = params.tau_s
    horizon = traj.horizon
    v = traj.states[:-1, 3]
    theta = traj.states[:-1, 2]
    delta = traj.inputs[:, 0]

    w = ts * v
    sd, cd = np.sin(delta), np.cos(delta)
    st, ct = np.sin(theta), np.cos(theta)
    rad = b * b - (w * sd) ** 2
    if np.any(np.abs(w * sd) > _DOMAIN_MARGIN * b):
        tau = int(np.argmax(np.abs(w * sd)))
        raise ModelDomainError(f"at timestamp {tau}: state outside model validity region")
    g = np.sqrt(rad)

    fr = b + w * cd - g
    dfr_dv = ts * cd + w * sd * sd * ts / g
    dfr_dd = -w * sd + w * w * sd * cd / g

    A = np.broadcast_to(np.eye(4), (horizon, 4, 4)).copy()
    A[:, 0, 2] = -fr * st
    A[:, 0, 3] = dfr_dv * ct
    A[:, 1, 2] = fr * ct
    A[:, 1, 3] = dfr_dv * st
    A[:, 2, 3] = ts * sd / g

    B = np.zeros((horizon, 4, 2))
    B[:, 0, 0] = dfr_dd * ct
    B[:, 1, 0] = dfr_dd * st
    B[:, 2, 0] = w * cd / g
    B[:, 3, 1] = ts
    return A, B
