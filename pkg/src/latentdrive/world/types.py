"""Domain types for the synthetic BEV driving world."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CLASS_FREE = 0
CLASS_DRIVABLE = 1
CLASS_AGENT = 2
CLASS_EGO = 3

COMMANDS = ("left", "straight", "right")


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = float(a)
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


@dataclass
class WorldConfig:
    grid_h: int = 32
    grid_w: int = 32
    cell_size: float = 0.5
    n_classes: int = 4
    horizon_hist: int = 4
    horizon_fut: int = 8
    dt: float = 0.5
    n_agents: int = 3
    seed: int = 0
    # metric thresholds; the benchmark being imitated does not publish its
    # exact per-metric values, so these are declared defaults
    road_half_width: float = 1.75
    comfort_accel_max: float = 4.0
    comfort_yaw_rate_max: float = 1.0

    @property
    def ttc_window(self):
        return 2.0 * self.dt

    @property
    def n_frames(self):
        return self.horizon_hist + 1 + self.horizon_fut

    def validate(self):
        if self.grid_h <= 0 or self.grid_w <= 0:
            raise ValueError("grid dims must be positive")
        if self.horizon_fut < 1:
            raise ValueError("horizon_fut must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        return self


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float

    def as_array(self):
        return np.array([self.x, self.y, self.heading, self.speed], dtype=np.float64)

    @staticmethod
    def from_array(a):
        return EgoState(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass
class Frame:
    bev: np.ndarray          # (grid_h, grid_w) uint8 class ids
    ego: EgoState
    agents: np.ndarray       # (n_agents, 4): x, y, heading, speed
    time_index: int


@dataclass
class Trajectory:
    """Future waypoints in the ego frame of the current (time t) pose."""

    waypoints: np.ndarray    # (horizon_fut, 2) float64

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 2:
            raise ValueError("waypoints must be (n, 2)")


@dataclass
class Episode:
    frames: list[Frame]
    expert_traj: Trajectory
    command: str
    config: WorldConfig = field(repr=False, default=None)

    @property
    def current(self) -> Frame:
        return self.frames[self.config.horizon_hist]

    def future_frames(self):
        return self.frames[self.config.horizon_hist + 1:]

    def history_frames(self):
        return self.frames[: self.config.horizon_hist]


@dataclass
class ScoreBreakdown:
    nc: float
    dac: float
    ttc: float
    ep: float
    comfort: float

    @property
    def pdms(self):
        # product of pass/fail penalties times the 5:5:2 weighted average
        return self.nc * self.dac * (5.0 * self.ep + 5.0 * self.ttc + 2.0 * self.comfort) / 12.0

    def as_dict(self):
        return {
            "nc": self.nc,
            "dac": self.dac,
            "ttc": self.ttc,
            "ep": self.ep,
            "comfort": self.comfort,
            "pdms": self.pdms,
        }
