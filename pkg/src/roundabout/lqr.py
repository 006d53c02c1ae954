"""Affine-quadratic per-vehicle subproblem and its Riccati solver.

Each consensus iteration asks every vehicle to minimize

    sum_tau dx' H[tau] dx + h[tau]' dx  +  sum_tau du' G[tau] du + g[tau]' du
    s.t.  dx[tau+1] = A[tau] dx[tau] + B[tau] du[tau],   dx[0] = 0

where H/h/G/g combine the tracking cost with the quadratic penalty
eta * ||J_i dX + r||^2 expanded over the vehicle's own constraint rows.
The expansion is exact: the quadratic added to the tracking terms equals
eta * J_i' J_i restricted to this vehicle (boundary rows carry their
factor-2 coefficients, and the four input rows per step contribute
2*eta*I), and the linear terms are 2*eta*J_i'r.  Dynamic programming with
an affine value function solves the problem in O(T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AffineLqrProblem",
    "LqrSolution",
    "LqrNumericalError",
    "assemble_subproblem",
    "solve_lqr",
    "subproblem_objective",
]

# Added to the input-block curvature before each inversion; guards against
# marginal definiteness without measurably moving solutions.
_RIDGE = 1e-9


class LqrNumericalError(RuntimeError):
    """An input-curvature block lost positive definiteness."""


@dataclass
class AffineLqrProblem:
    H: np.ndarray  # (T+1, 4, 4) state quadratic
    h: np.ndarray  # (T+1, 4) state linear
    G: np.ndarray  # (T, 2, 2) input quadratic
    g: np.ndarray  # (T, 2) input linear
    A: np.ndarray  # (T, 4, 4)
    B: np.ndarray  # (T, 4, 2)

    @property
    def horizon(self) -> int:
        return self.A.shape[0]


@dataclass
class LqrSolution:
    dx: np.ndarray  # (T+1, 4), dx[0] = 0
    du: np.ndarray  # (T, 2)
    value: float


def assemble_subproblem(vehicle, tracking, system, r_vec, eta, dynamics) -> AffineLqrProblem:
    """Combine tracking terms with the penalty rows of one vehicle.

    r_vec is the aggregate consensus vector indexed by the canonical row
    layout; only the rows touching this vehicle contribute.
    """
    r_vec = np.asarray(r_vec, dtype=float)
    if r_vec.shape != (system.layout.n,):
        raise IndexError(
            f"r_vec has length {r_vec.shape}, layout expects {system.layout.n}"
        )
    if eta <= 0:
        raise ValueError("eta must be positive")
    blocks = system.blocks[vehicle]
    A, B = dynamics

    C = blocks.state_coeff
    H = tracking.Q + eta * np.einsum("tmi,tmj->tij", C, C)
    h = tracking.q + 2.0 * eta * np.einsum("tm,tmi->ti", r_vec[blocks.state_row_idx], C)

    Cu = blocks.input_coeff
    G = tracking.R + eta * np.einsum("tmi,tmj->tij", Cu, Cu)
    g = tracking.r + 2.0 * eta * np.einsum("tm,tmi->ti", r_vec[blocks.input_row_idx], Cu)

    return AffineLqrProblem(H=H, h=h, G=G, g=g, A=A, B=B)


def subproblem_objective(prob: AffineLqrProblem, dx: np.ndarray, du: np.ndarray) -> float:
    """Objective value at a candidate variation (definitional evaluation)."""
    val = np.einsum("ti,tij,tj->", dx, prob.H, dx) + np.einsum("ti,ti->", prob.h, dx)
    val += np.einsum("ti,tij,tj->", du, prob.G, du) + np.einsum("ti,ti->", prob.g, du)
    return float(val)


def solve_lqr(prob: AffineLqrProblem) -> LqrSolution:
    """Globally optimal variation by backward Riccati recursion.

    The value function is kept affine, V_tau(dx) = dx'S dx + s'dx + c, so
    linear cost terms propagate exactly; the forward pass rolls out from
    dx[0] = 0.
    """
    horizon = prob.horizon
    S = prob.H[horizon].copy()
    s = prob.h[horizon].copy()
    gains = np.empty((horizon, 2, 4))
    feeds = np.empty((horizon, 2))

    eye2 = _RIDGE * np.eye(2)
    for tau in range(horizon - 1, -1, -1):
        A, B = prob.A[tau], prob.B[tau]
        SB = S @ B
        F = prob.G[tau] + B.T @ SB + eye2
        try:
            np.linalg.cholesky(F)
        except np.linalg.LinAlgError as err:
            raise LqrNumericalError(
                f"input curvature block not positive definite at tau={tau}"
            ) from err
        M = SB.T @ A
        m = 0.5 * (prob.g[tau] + B.T @ s)
        K = -np.linalg.solve(F, M)
        k = -np.linalg.solve(F, m)
        gains[tau] = K
        feeds[tau] = k

        S_next = prob.H[tau] + A.T @ S @ A + M.T @ K
        S = 0.5 * (S_next + S_next.T)
        s = prob.h[tau] + A.T @ s + 2.0 * (M.T @ k)

    dx = np.zeros((horizon + 1, 4))
    du = np.empty((horizon, 2))
    for tau in range(horizon):
        du[tau] = gains[tau] @ dx[tau] + feeds[tau]
        dx[tau + 1] = prob.A[tau] @ dx[tau] + prob.B[tau] @ du[tau]

    return LqrSolution(dx=dx, du=du, value=subproblem_objective(prob, dx, du))
