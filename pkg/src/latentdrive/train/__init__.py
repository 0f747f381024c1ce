"""Training curriculum, checkpointing, and evaluation."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluate import closed_loop_eval, open_loop_eval, selection_for_stage
from .stages import (encode_future_target, run_curriculum, run_stage,
                     set_stage_trainable, stage1_losses, stage2_losses,
                     stage3_losses)

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "closed_loop_eval", "open_loop_eval", "selection_for_stage",
    "encode_future_target", "run_curriculum", "run_stage",
    "set_stage_trainable", "stage1_losses", "stage2_losses", "stage3_losses",
]
