"""Pure-pursuit steering toward a lookahead point on a reference path."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["lookahead_point", "pure_pursuit_steer"]

DEFAULT_LOOKAHEAD = 5.0  # m


def lookahead_point(path, position, lookahead: float) -> np.ndarray:
    """Path point roughly `lookahead` meters ahead of the nearest waypoint.

    Walks forward by arc length; saturates at the last waypoint when the
    path runs out.
    """
    k = path.index.query_one(np.asarray(position, dtype=float))
    target_s = path.arclength[k] + lookahead
    m = int(np.searchsorted(path.arclength, target_s))
    return path.waypoints[min(m, len(path.waypoints) - 1)]


def pure_pursuit_steer(state, path, params, lookahead: float = DEFAULT_LOOKAHEAD) -> float:
    """Steering angle that arcs the rear axle onto the lookahead point."""
    pos = np.array([state.px, state.py])
    target = lookahead_point(path, pos, lookahead)
    chord = target - pos
    dist = float(np.linalg.norm(chord))
    if dist < 1e-9:
        return 0.0
    alpha = math.atan2(chord[1], chord[0]) - state.theta
    curvature = 2.0 * math.sin(alpha) / dist
    delta = math.atan(params.wheelbase_b * curvature)
    return float(np.clip(delta, params.delta_min, params.delta_max))
