"""Independent small-scale solvers used only by the test suite.

These deliberately avoid the production code paths: the dense KKT solve
checks the Riccati recursion and the log-barrier interior-point solve
checks the consensus iteration's fixed point on the full coupled
subproblem.  Sizes are desk-scale (N <= 3, T <= 20); nothing here is
shipped with the package.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "dense_qp_matrices",
    "solve_dense_lqr",
    "solve_subproblem_ipm",
    "vehicle_variable_count",
]


def vehicle_variable_count(horizon: int) -> int:
    return 4 * (horizon + 1) + 2 * horizon


def _state_slice(tau: int) -> slice:
    return slice(6 * tau, 6 * tau + 4)


def _input_slice(tau: int) -> slice:
    return slice(6 * tau + 4, 6 * tau + 6)


def dense_qp_matrices(prob):
    """Stack one vehicle's subproblem as (P, q, E) with variables
    w = (dx_0, du_0, dx_1, ..., dx_T): objective w'Pw + q'w, equalities Ew = 0
    covering dx_0 = 0 and the dynamics rows."""
    horizon = prob.horizon
    n_w = vehicle_variable_count(horizon)
    P = np.zeros((n_w, n_w))
    q = np.zeros(n_w)
    for tau in range(horizon + 1):
        sl = _state_slice(tau)
        P[sl, sl] = prob.H[tau]
        q[sl] = prob.h[tau]
    for tau in range(horizon):
        sl = _input_slice(tau)
        P[sl, sl] = prob.G[tau]
        q[sl] = prob.g[tau]

    E = np.zeros((4 * (horizon + 1), n_w))
    E[0:4, _state_slice(0)] = np.eye(4)
    for tau in range(horizon):
        rows = slice(4 * (tau + 1), 4 * (tau + 2))
        E[rows, _state_slice(tau + 1)] = np.eye(4)
        E[rows, _state_slice(tau)] = -prob.A[tau]
        E[rows, _input_slice(tau)] = -prob.B[tau]
    return P, q, E


def _split(w: np.ndarray, horizon: int):
    dx = np.stack([w[_state_slice(tau)] for tau in range(horizon + 1)])
    du = np.stack([w[_input_slice(tau)] for tau in range(horizon)])
    return dx, du


def solve_dense_lqr(prob):
    """Equality-constrained QP by one dense KKT factorization."""
    P, q, E = dense_qp_matrices(prob)
    n_w, n_e = P.shape[0], E.shape[0]
    kkt = np.zeros((n_w + n_e, n_w + n_e))
    kkt[:n_w, :n_w] = P + P.T
    kkt[:n_w, n_w:] = E.T
    kkt[n_w:, :n_w] = E
    rhs = np.concatenate([-q, np.zeros(n_e)])
    sol = np.linalg.solve(kkt, rhs)
    return _split(sol[:n_w], prob.horizon)


def _vehicle_row_matrix(system, vehicle, horizon: int) -> np.ndarray:
    """Dense (n_rows, n_w) coefficient matrix of one vehicle's blocks."""
    n_w = vehicle_variable_count(horizon)
    J = np.zeros((system.layout.n, n_w))
    blocks = system.blocks[vehicle]
    for tau in range(horizon + 1):
        for m in range(blocks.state_row_idx.shape[1]):
            J[blocks.state_row_idx[tau, m], _state_slice(tau)] += blocks.state_coeff[tau, m]
    for tau in range(horizon):
        for m in range(4):
            J[blocks.input_row_idx[tau, m], _input_slice(tau)] += blocks.input_coeff[tau, m]
    return J


def solve_subproblem_ipm(
    system,
    trackings,
    dynamics,
    epsilon: float = 0.0,
    tol: float = 1e-10,
    max_newton: int = 400,
):
    """Primal log-barrier solve of the coupled convexified subproblem.

    minimize   sum_i dXi' Hbar_i dXi + hbar_i' dXi
    subject to E_i dXi = 0 for every vehicle,
               sum_i J_i dXi + (l - epsilon) >= 0.

    epsilon mirrors the margin the consensus prox pushes into the
    constraints, so fixed points of the two solvers coincide.  Returns
    (per-vehicle (dx, du), info dict with KKT residuals).
    """
    from roundabout.lqr import AffineLqrProblem

    n_vehicles = len(trackings)
    horizon = dynamics[0][0].shape[0]
    sizes = [vehicle_variable_count(horizon)] * n_vehicles
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n_total = int(offsets[-1])

    P = np.zeros((n_total, n_total))
    q = np.zeros(n_total)
    eq_blocks = []
    for i, tracking in enumerate(trackings):
        A, B = dynamics[i]
        prob = AffineLqrProblem(
            H=tracking.Q,
            h=tracking.q,
            G=np.broadcast_to(tracking.R, (horizon, 2, 2)).copy(),
            g=tracking.r,
            A=A,
            B=B,
        )
        Pi, qi, Ei = dense_qp_matrices(prob)
        sl = slice(offsets[i], offsets[i + 1])
        P[sl, sl] = Pi
        q[sl] = qi
        eq_blocks.append(Ei)
    n_eq_per = eq_blocks[0].shape[0]
    E = np.zeros((n_eq_per * n_vehicles, n_total))
    for i, Ei in enumerate(eq_blocks):
        E[i * n_eq_per : (i + 1) * n_eq_per, offsets[i] : offsets[i + 1]] = Ei

    G = np.zeros((system.layout.n, n_total))
    for i in range(n_vehicles):
        G[:, offsets[i] : offsets[i + 1]] = _vehicle_row_matrix(system, i, horizon)
    b = system.l - epsilon  # rows read G w + b >= 0

    w = np.zeros(n_total)
    slack = G @ w + b
    if np.min(slack) <= 0:
        raise ValueError("w = 0 is not strictly feasible for this instance")

    n_ineq = len(b)
    P_sym = P + P.T
    t_barrier = 1.0
    mu = 20.0
    n_eq = E.shape[0]
    lam = np.zeros(n_eq)
    for _ in range(120):  # outer barrier updates
        for _ in range(max_newton):
            slack = G @ w + b
            grad = t_barrier * (P_sym @ w + q) - G.T @ (1.0 / slack)
            hess = t_barrier * P_sym + G.T @ ((1.0 / slack**2)[:, None] * G)
            kkt = np.zeros((n_total + n_eq, n_total + n_eq))
            kkt[:n_total, :n_total] = hess
            kkt[:n_total, n_total:] = E.T
            kkt[n_total:, :n_total] = E
            rhs = np.concatenate([-(grad + E.T @ lam), -(E @ w)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            dw = sol[:n_total]
            dlam = sol[n_total:]
            # fraction-to-boundary line search on the slacks
            step = 1.0
            g_dw = G @ dw
            bad = g_dw < 0
            if np.any(bad):
                step = min(1.0, 0.99 * np.min(-slack[bad] / g_dw[bad]))
            while step > 1e-14:
                w_try = w + step * dw
                if np.min(G @ w_try + b) > 0:
                    break
                step *= 0.5
            w = w + step * dw
            lam = lam + step * dlam
            newton_dec = float(np.dot(dw, hess @ dw))
            if newton_dec < 1e-16 or np.linalg.norm(step * dw) < 1e-14:
                break
        if n_ineq / t_barrier < tol * (1.0 + abs(float(w @ P @ w + q @ w))):
            break
        t_barrier *= mu

    slack = G @ w + b
    dual_ineq = 1.0 / (t_barrier * slack)
    stationarity = P_sym @ w + q + E.T @ lam / t_barrier - G.T @ dual_ineq
    info = {
        "min_slack": float(np.min(slack)),
        "duality_gap": n_ineq / t_barrier,
        "stationarity": float(np.linalg.norm(stationarity, np.inf)),
        "eq_residual": float(np.linalg.norm(E @ w, np.inf)),
    }
    deltas = []
    for i in range(n_vehicles):
        deltas.append(_split(w[offsets[i] : offsets[i + 1]], horizon))
    return deltas, info
