from .config import ModelConfig
from .model import DriveModel
from .types import BevLatent, HiddenState, TokenSeq, TrajectorySet

__all__ = [
    "ModelConfig",
    "DriveModel",
    "BevLatent",
    "HiddenState",
    "TokenSeq",
    "TrajectorySet",
]
