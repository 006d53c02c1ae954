"""Dual consensus ADMM rounds over the shared constraint space.

Every vehicle keeps full-length dual/consensus vectors (p, s, y, z) over
the canonical row layout.  One synchronized round per vehicle i is:

    broadcast y_i, gather everyone's y          (barrier)
    p += rho * sum_{j!=i} (y_i - y_j)
    s += sigma * (y_i - z)
    r  = rho * sum_{j!=i} (y_i + y_j) + sigma*z - p - s
    dX = argmin  tracking_i(dX) + eta*||J_i dX + r||^2   (affine LQR)
    y  = 2*eta*(J_i dX + r)
    z* = max(N*(s + sigma*y), -l + epsilon)     element-wise
    z  = s/sigma + y - z*/(N*sigma)

The epsilon shift in the max pushes the consensus point strictly inside
the feasible side, so converged iterates satisfy the stacked constraints
with margin epsilon; it is the only feasibility margin in the system.
Sums over other vehicles always run in ascending vehicle order, which
makes results bit-identical regardless of how vehicles are distributed
over workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lqr import assemble_subproblem, solve_lqr

__all__ = [
    "AdmmConfig",
    "AdmmWorkerState",
    "VehicleContext",
    "derive_eta",
    "dual_steps",
    "prox_z",
    "vehicle_round",
    "inner_iteration",
]


def derive_eta(sigma: float, rho: float, n_vehicles: int) -> float:
    """Primal step weight 1 / (2*(sigma + 2*rho*(N-1)))."""
    if sigma <= 0 or rho < 0:
        raise ValueError("sigma must be positive and rho non-negative")
    if n_vehicles < 1:
        raise ValueError("need at least one vehicle")
    return 1.0 / (2.0 * (sigma + 2.0 * rho * (n_vehicles - 1)))


@dataclass(frozen=True)
class AdmmConfig:
    sigma: float
    rho: float
    eta: float
    n_vehicles: int
    epsilon: float

    def __post_init__(self) -> None:
        expected = derive_eta(self.sigma, self.rho, self.n_vehicles)
        if self.eta != expected:
            raise ValueError(f"eta must equal {expected!r}, got {self.eta!r}")

    @classmethod
    def from_params(cls, params, n_vehicles: int) -> "AdmmConfig":
        return cls(
            sigma=params.sigma,
            rho=params.rho,
            eta=derive_eta(params.sigma, params.rho, n_vehicles),
            n_vehicles=n_vehicles,
            epsilon=params.epsilon,
        )


@dataclass
class AdmmWorkerState:
    """One vehicle's dual/consensus vectors over the row layout."""

    p: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    r: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdmmWorkerState":
        return cls(
            p=np.zeros(n),
            s=np.zeros(n),
            y=np.zeros(n),
            z=np.zeros(n),
            r=np.zeros(n),
        )

    def warm_restart(self) -> None:
        """Reset p and s for a new outer iteration, keeping y and z."""
        self.p[:] = 0.0
        self.s[:] = 0.0
        self.k = 0


def dual_steps(state: AdmmWorkerState, y_all: np.ndarray, vehicle: int, cfg: AdmmConfig) -> np.ndarray:
    """Apply the p/s updates and form the aggregate r for one vehicle.

    y_all is the barrier-synchronized (N, n) snapshot of every vehicle's y.
    """
    y_i = y_all[vehicle]
    sum_minus = np.zeros_like(y_i)
    sum_plus = np.zeros_like(y_i)
    for j in range(cfg.n_vehicles):
        if j == vehicle:
            continue
        sum_minus += y_i - y_all[j]
        sum_plus += y_i + y_all[j]
    state.p = state.p + cfg.rho * sum_minus
    state.s = state.s + cfg.sigma * (y_i - state.z)
    state.r = cfg.rho * sum_plus + cfg.sigma * state.z - state.p - state.s
    return state.r


def prox_z(s_new: np.ndarray, y_new: np.ndarray, l: np.ndarray, cfg: AdmmConfig):
    """Element-wise proximal projection and the consensus z it implies."""
    z_star = np.maximum(cfg.n_vehicles * (s_new + cfg.sigma * y_new), -l + cfg.epsilon)
    z = s_new / cfg.sigma + y_new - z_star / (cfg.n_vehicles * cfg.sigma)
    return z_star, z


@dataclass
class VehicleContext:
    """Everything one vehicle needs for the rounds of one outer iteration."""

    vehicle: int
    state: AdmmWorkerState
    tracking: object  # TrackingCost
    system: object  # ConstraintSystem
    dynamics: tuple  # (A, B) stacks


def vehicle_round(ctx: VehicleContext, y_all: np.ndarray, cfg: AdmmConfig):
    """One synchronized round for one vehicle; returns its LqrSolution."""
    r = dual_steps(ctx.state, y_all, ctx.vehicle, cfg)
    prob = assemble_subproblem(
        ctx.vehicle, ctx.tracking, ctx.system, r, cfg.eta, ctx.dynamics
    )
    sol = solve_lqr(prob)
    jdx = ctx.system.blocks[ctx.vehicle].product(sol.dx, sol.du, ctx.system.layout.n)
    y_new = 2.0 * cfg.eta * (jdx + r)
    _, z_new = prox_z(ctx.state.s, y_new, ctx.system.l, cfg)
    ctx.state.y = y_new
    ctx.state.z = z_new
    ctx.state.k += 1
    return sol


def inner_iteration(contexts, cfg: AdmmConfig):
    """Single-threaded reference executor for one round over all vehicles.

    Snapshots every y first (the broadcast), then runs each vehicle's
    round; parallel executors must match this bit for bit.
    """
    if [ctx.vehicle for ctx in contexts] != list(range(len(contexts))):
        raise ValueError("contexts must be ordered by vehicle id")
    y_all = np.stack([ctx.state.y for ctx in contexts])
    return [vehicle_round(ctx, y_all, cfg) for ctx in contexts]
