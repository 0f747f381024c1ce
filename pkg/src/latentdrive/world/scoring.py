"""Trajectory execution and closed-/open-loop scoring.

Execution is waypoint teleportation (non-reactive evaluation): the ego is
placed on each waypoint in turn, headings come from consecutive-waypoint
direction, agents keep their constant velocities. All scoring functions are
pure: neither the episode nor the trajectory is mutated.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .types import (
    CLASS_DRIVABLE,
    EgoState,
    Episode,
    ScoreBreakdown,
    Trajectory,
    wrap_angle,
)


def states_from_waypoints(start: EgoState, wpts_world, dt):
    """(F, 4) ego states for a waypoint sequence in world coordinates.

    Heading falls back to the previous heading on zero displacement, so a
    stationary trajectory keeps the starting pose.
    """
    wpts_world = np.asarray(wpts_world, dtype=np.float64)
    out = np.zeros((wpts_world.shape[0], 4), dtype=np.float64)
    px, py, ph = start.x, start.y, start.heading
    for j in range(wpts_world.shape[0]):
        x, y = wpts_world[j]
        dx, dy = x - px, y - py
        dist = math.hypot(dx, dy)
        heading = math.atan2(dy, dx) if dist > 1e-12 else ph
        out[j] = (x, y, wrap_angle(heading), dist / dt)
        px, py, ph = x, y, heading
    return out


def ego_to_world(traj: Trajectory, origin: EgoState):
    c, s = math.cos(origin.heading), math.sin(origin.heading)
    rot = np.array([[c, -s], [s, c]])
    return traj.waypoints @ rot.T + np.array([origin.x, origin.y])


def rollout(ep: Episode, traj: Trajectory):
    """Execute a trajectory: list of EgoState, one per future frame."""
    origin = ep.current.ego
    wpts = ego_to_world(traj, origin)
    states = states_from_waypoints(origin, wpts, ep.config.dt)
    return [EgoState.from_array(s) for s in states]


def drivable_mask(ep: Episode):
    """Drivable cells: any frame shows CLASS_DRIVABLE there.

    The union across frames recovers cells temporarily hidden by moving
    entities; cells occluded in every frame stay non-drivable.
    """
    mask = np.zeros_like(ep.frames[0].bev, dtype=bool)
    for f in ep.frames:
        mask |= f.bev == CLASS_DRIVABLE
    return mask


def expert_route(ep: Episode):
    """World-frame route polyline: current pose then expert waypoints."""
    origin = ep.current.ego
    wpts = ego_to_world(ep.expert_traj, origin)
    return np.concatenate([[[origin.x, origin.y]], wpts], axis=0)


def _rollout_arrays(ep: Episode, traj: Trajectory):
    states = np.stack([s.as_array() for s in rollout(ep, traj)])
    agents = np.stack([f.agents for f in ep.future_frames()])
    return states, agents


def score_pdm(ep: Episode, traj: Trajectory) -> ScoreBreakdown:
    """Closed-loop score: NC/DAC penalties times the 5:5:2 weighted average
    of EP, TTC and Comfort."""
    cfg = ep.config
    gh, gw, cell, dt = cfg.grid_h, cfg.grid_w, cfg.cell_size, cfg.dt
    states, agents = _rollout_arrays(ep, traj)

    if agents.shape[1] > 0 and kernels.first_collision_frame(states, agents, cell, gh, gw) >= 0:
        nc = 0.0
    else:
        nc = 1.0

    driv = drivable_mask(ep)
    dac = 1.0
    for s in states:
        n, r0, c0, r1, c1 = kernels.footprint_cells(s[0], s[1], s[2], cell, gh, gw)
        if n < 1 or not driv[r0, c0] or (n == 2 and not driv[r1, c1]):
            dac = 0.0
            break

    route = expert_route(ep)
    total = float(np.hypot(*np.diff(route, axis=0).T).sum())
    if total > 0.0:
        progress = max(kernels.polyline_progress(route, s[0], s[1]) for s in states)
        ep_score = min(max(progress / total, 0.0), 1.0)
    else:
        ep_score = 0.0

    if agents.shape[1] > 0 and kernels.ttc_violation(
        states, agents, dt, cfg.ttc_window, cell, gh, gw
    ):
        ttc = 0.0
    else:
        ttc = 1.0

    origin = ep.current.ego
    speeds = np.concatenate([[origin.speed], states[:, 3]])
    headings = np.concatenate([[origin.heading], states[:, 2]])
    accels = np.diff(speeds) / dt
    yaw_rates = np.array([wrap_angle(d) for d in np.diff(headings)]) / dt
    comfort = float(
        np.abs(accels).max() <= cfg.comfort_accel_max
        and np.abs(yaw_rates).max() <= cfg.comfort_yaw_rate_max
    )

    return ScoreBreakdown(nc=nc, dac=dac, ttc=ttc, ep=ep_score, comfort=comfort)


def open_loop_metrics(pred: Trajectory, gt: Trajectory, ep: Episode,
                      horizons=(1.0, 2.0, 3.0)):
    """L2 distance and collision flag at each horizon (seconds)."""
    cfg = ep.config
    dt = cfg.dt
    l2 = {}
    collision = {}
    states, agents = _rollout_arrays(ep, pred)
    for h in horizons:
        idx = int(round(h / dt))
        if idx < 1 or idx > cfg.horizon_fut or abs(idx * dt - h) > 1e-9:
            raise ValueError(f"horizon {h}s outside the trajectory range")
        l2[h] = float(np.linalg.norm(pred.waypoints[idx - 1] - gt.waypoints[idx - 1]))
        if agents.shape[1] > 0:
            hit = kernels.first_collision_frame(
                states[:idx], agents[:idx], cfg.cell_size, cfg.grid_h, cfg.grid_w
            )
            collision[h] = bool(hit >= 0)
        else:
            collision[h] = False
    return l2, collision
