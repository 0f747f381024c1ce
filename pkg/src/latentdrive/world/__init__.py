from .types import (
    CLASS_AGENT,
    CLASS_DRIVABLE,
    CLASS_EGO,
    CLASS_FREE,
    COMMANDS,
    EgoState,
    Episode,
    Frame,
    ScoreBreakdown,
    Trajectory,
    WorldConfig,
)
from .generate import generate_episode
from .scoring import (
    drivable_mask,
    open_loop_metrics,
    rollout,
    score_pdm,
    states_from_waypoints,
)
from .dataset import read_dataset, write_dataset
from .render import render_frame

__all__ = [
    "CLASS_AGENT",
    "CLASS_DRIVABLE",
    "CLASS_EGO",
    "CLASS_FREE",
    "COMMANDS",
    "EgoState",
    "Episode",
    "Frame",
    "ScoreBreakdown",
    "Trajectory",
    "WorldConfig",
    "generate_episode",
    "drivable_mask",
    "open_loop_metrics",
    "rollout",
    "score_pdm",
    "states_from_waypoints",
    "read_dataset",
    "write_dataset",
    "render_frame",
]
