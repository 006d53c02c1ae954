"""SVG plot emission for solved or simulated trajectories."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .records import min_distance_profile, trajectories_from_records

__all__ = ["plot_trajectories", "plot_inputs", "plot_min_distance", "emit_all"]


def _colors(n: int):
    cmap = plt.get_cmap("tab20")
    return [cmap(i % 20) for i in range(n)]


def plot_trajectories(records, scenario, path) -> None:
    """Overhead view: boundary cloud plus every vehicle's path."""
    trajs = trajectories_from_records(records)
    fig, ax = plt.subplots(figsize=(7, 7))
    cloud = scenario.boundary.points
    ax.scatter(cloud[:, 0], cloud[:, 1], s=0.3, c="0.6", linewidths=0, rasterized=False)
    for traj, color in zip(trajs, _colors(len(trajs))):
        ax.plot(traj.states[:, 0], traj.states[:, 1], color=color, lw=1.2)
        ax.plot(traj.states[0, 0], traj.states[0, 1], marker="o", ms=3, color=color)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("trajectories")
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_inputs(records, scenario, path) -> None:
    """Steering and acceleration profiles with their bound lines."""
    trajs = trajectories_from_records(records)
    params = scenario.params
    t = np.arange(trajs[0].horizon) * params.tau_s
    fig, (ax_d, ax_a) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for traj, color in zip(trajs, _colors(len(trajs))):
        ax_d.plot(t, traj.inputs[:, 0], color=color, lw=0.8)
        ax_a.plot(t, traj.inputs[:, 1], color=color, lw=0.8)
    for ax, lo, hi, label in (
        (ax_d, params.delta_min, params.delta_max, "steering [rad]"),
        (ax_a, params.a_min, params.a_max, "acceleration [m/s$^2$]"),
    ):
        ax.axhline(lo, color="goldenrod", lw=1.5)
        ax.axhline(hi, color="goldenrod", lw=1.5)
        ax.set_ylabel(label)
    ax_a.set_xlabel("time [s]")
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_min_distance(records, scenario, path) -> None:
    """Minimum circle-center distance over time against d_safe."""
    trajs = trajectories_from_records(records)
    params = scenario.params
    profile = min_distance_profile(trajs, params)
    t = np.arange(len(profile)) * params.tau_s
    fig, ax = plt.subplots(figsize=(7, 4))
    if np.all(np.isfinite(profile)):
        ax.plot(t, profile, color="tab:blue", lw=1.2)
    else:
        ax.text(0.5, 0.5, "single vehicle: no pairwise distances", ha="center", va="center")
    ax.axhline(params.d_safe, color="tab:red", lw=1.5)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("min circle distance [m]")
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_all(records, scenario, out_dir) -> list:
    """Write the three standard plots; returns the emitted paths."""
    out = []
    for name, fn in (
        ("trajectories.svg", plot_trajectories),
        ("inputs.svg", plot_inputs),
        ("distances.svg", plot_min_distance),
    ):
        target = out_dir / name
        fn(records, scenario, target)
        out.append(target)
    return out
