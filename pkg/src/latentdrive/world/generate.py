"""Synthetic episode generation: road corridor, traffic, expert policy.

A scene is a straight or constant-curvature road corridor inside the grid.
The expert follows the lane center at a sampled cruise speed, dropping to a
slower profile when the sampled traffic would otherwise conflict; agent
layouts that cannot be made safe are resampled a bounded number of times.
By construction the accepted expert trajectory is collision-free, inside
the drivable area, and TTC-clean.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import GenerationError
from . import kernels
from .scoring import states_from_waypoints
from .types import (
    CLASS_AGENT,
    CLASS_DRIVABLE,
    CLASS_EGO,
    COMMANDS,
    EgoState,
    Episode,
    Frame,
    Trajectory,
    WorldConfig,
)

_MAX_ATTEMPTS = 30
_SLOWDOWN_FACTORS = (1.0, 0.8, 0.65, 0.5)


class _Road:
    """Constant-curvature centerline starting at (x0, y0) with heading h0."""

    def __init__(self, x0, y0, h0, curvature, length):
        self.x0 = x0
        self.y0 = y0
        self.h0 = h0
        self.k = curvature
        self.length = length

    def point(self, s):
        s = np.asarray(s, dtype=np.float64)
        if abs(self.k) < 1e-9:
            x = self.x0 + s * math.cos(self.h0)
            y = self.y0 + s * math.sin(self.h0)
            theta = np.full_like(s, self.h0)
        else:
            theta = self.h0 + self.k * s
            x = self.x0 + (np.sin(theta) - math.sin(self.h0)) / self.k
            y = self.y0 - (np.cos(theta) - math.cos(self.h0)) / self.k
        return np.stack([np.asarray(x), np.asarray(y)], axis=-1), theta

    def polyline(self, step=0.25):
        s = np.arange(0.0, self.length + step, step)
        s[-1] = min(s[-1], self.length)
        return self.point(s)[0]


def _sample_road(cfg: WorldConfig, rng, command):
    h0 = rng.uniform(-0.1, 0.1)
    x0 = rng.uniform(1.0, 2.0)
    v = rng.uniform(1.2, 1.9)
    length = (cfg.horizon_hist + cfg.horizon_fut) * cfg.dt * v + 1.0
    if command == "left":
        y0 = rng.uniform(3.5, 4.5)
        k = 1.0 / rng.uniform(10.0, 14.0)
    elif command == "right":
        y0 = rng.uniform(11.5, 12.5)
        k = -1.0 / rng.uniform(10.0, 14.0)
    else:
        y0 = rng.uniform(6.0, 10.0)
        k = 0.0
    return _Road(x0, y0, h0, k, length), v


def _sample_agents(cfg: WorldConfig, rng, road: _Road, s_current):
    """Agent reference states at the current frame: (n_agents, 4)."""
    agents = np.zeros((cfg.n_agents, 4), dtype=np.float64)
    for i in range(cfg.n_agents):
        s_a = rng.uniform(s_current + 2.0, road.length - 0.5)
        base, theta = road.point(s_a)
        tangent = float(theta)
        normal = tangent + math.pi / 2.0
        kind = rng.random()
        if kind < 0.35:        # parked at the road edge
            offset = rng.uniform(1.0, 2.5) * (1 if rng.random() < 0.5 else -1)
            heading, speed = tangent, 0.0
        elif kind < 0.75:      # slow traffic in the lane
            offset = rng.uniform(-1.0, 1.0)
            heading = tangent
            speed = rng.uniform(0.3, 0.9)
        else:                  # crossing from the side
            side = 1 if rng.random() < 0.5 else -1
            offset = side * rng.uniform(2.5, 4.5)
            heading = tangent - side * math.pi / 2.0
            speed = rng.uniform(0.4, 1.0)
        agents[i, 0] = base[0] + math.cos(normal) * offset
        agents[i, 1] = base[1] + math.sin(normal) * offset
        agents[i, 2] = heading
        agents[i, 3] = speed
    return agents


def _agents_at(agents_ref, frame_offsets, dt):
    """Constant-velocity agent states per frame: (F, A, 4)."""
    n_agents = agents_ref.shape[0]
    out = np.zeros((len(frame_offsets), n_agents, 4), dtype=np.float64)
    for f, off in enumerate(frame_offsets):
        out[f] = agents_ref
        out[f, :, 0] += np.cos(agents_ref[:, 2]) * agents_ref[:, 3] * off * dt
        out[f, :, 1] += np.sin(agents_ref[:, 2]) * agents_ref[:, 3] * off * dt
    return out


def _expert_states(cfg, road, v, factor):
    """(ego_states (n_frames, 4), future world waypoints (fut, 2)).

    History/current frames cruise at v along the centerline; future frames
    move at v*factor and are derived through the same waypoint->state rule
    the rollout uses, so replaying the expert reproduces them exactly.
    """
    hist, fut, dt = cfg.horizon_hist, cfg.horizon_fut, cfg.dt
    s_hist = np.arange(hist + 1) * dt * v
    pts, theta = road.point(s_hist)
    states = np.zeros((cfg.n_frames, 4), dtype=np.float64)
    states[: hist + 1, 0] = pts[:, 0]
    states[: hist + 1, 1] = pts[:, 1]
    states[: hist + 1, 2] = theta
    states[: hist + 1, 3] = v

    s_cur = s_hist[-1]
    s_fut = s_cur + np.arange(1, fut + 1) * dt * v * factor
    wpts = road.point(s_fut)[0]
    current = EgoState.from_array(states[hist])
    states[hist + 1:] = states_from_waypoints(current, wpts, dt)
    return states, wpts


def _world_to_ego(points, origin: EgoState):
    d = np.asarray(points, dtype=np.float64) - np.array([origin.x, origin.y])
    c, s = math.cos(-origin.heading), math.sin(-origin.heading)
    rot = np.array([[c, -s], [s, c]])
    return d @ rot.T


def generate_episode(cfg: WorldConfig, seed) -> Episode:
    """Build one deterministic episode from (cfg, seed).

    Raises GenerationError when no collision-free expert exists after the
    retry budget; the caller is expected to reseed.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    command = COMMANDS[int(rng.integers(len(COMMANDS)))]
    road, v = _sample_road(cfg, rng, command)
    gh, gw, cell, dt = cfg.grid_h, cfg.grid_w, cfg.cell_size, cfg.dt
    hist, fut = cfg.horizon_hist, cfg.horizon_fut

    mask = kernels.corridor_mask(road.polyline(), cfg.road_half_width, cell, gh, gw)
    offsets = list(range(-hist, fut + 1))

    chosen = None
    for _ in range(_MAX_ATTEMPTS):
        agents_ref = _sample_agents(cfg, rng, road, s_current=hist * dt * v)
        agents_all = _agents_at(agents_ref, offsets, dt)
        for factor in _SLOWDOWN_FACTORS:
            states, wpts = _expert_states(cfg, road, v, factor)
            if cfg.n_agents > 0:
                if kernels.first_collision_frame(states, agents_all, cell, gh, gw) >= 0:
                    continue
                fut_states = states[hist + 1:]
                fut_agents = agents_all[hist + 1:]
                if kernels.ttc_violation(
                    fut_states, fut_agents, dt, cfg.ttc_window, cell, gh, gw
                ):
                    continue
            chosen = (agents_ref, agents_all, states, wpts)
            break
        if chosen is not None:
            break
    if chosen is None:
        raise GenerationError(f"no safe expert found for seed {seed}")

    agents_ref, agents_all, states, wpts = chosen
    frames = []
    for f in range(cfg.n_frames):
        raster = np.zeros((gh, gw), dtype=np.uint8)
        raster[mask] = CLASS_DRIVABLE
        ag = agents_all[f]
        kernels.paint_footprints(raster, ag[:, 0].copy(), ag[:, 1].copy(),
                                 ag[:, 2].copy(), cell, CLASS_AGENT)
        kernels.paint_footprints(
            raster,
            np.array([states[f, 0]]), np.array([states[f, 1]]),
            np.array([states[f, 2]]), cell, CLASS_EGO,
        )
        frames.append(
            Frame(
                bev=raster,
                ego=EgoState.from_array(states[f]),
                agents=ag.copy(),
                time_index=f - hist,
            )
        )

    current = EgoState.from_array(states[hist])
    expert = Trajectory(_world_to_ego(wpts, current))
    return Episode(frames=frames, expert_traj=expert, command=command, config=cfg)
