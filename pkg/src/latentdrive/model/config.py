"""Model hyperparameters (toy scale by default)."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ModelConfig:
    d_model: int = 64
    d_latent: int = 32
    n_heads: int = 4
    n_enc_blocks: int = 4
    n_latents: int = 8          # fixed-length latent summary size
    patch: int = 4              # cells per BEV patch side
    k_modes: int = 5            # candidate trajectories
    dit_depth: int = 2
    dit_heads: int = 4
    d_cond: int = 64            # conditioning vector width in the denoiser
    flow_steps: int = 25        # Euler steps N
    fuse_mode: str = "mean"     # "mean" | "gate"
    mlp_ratio: int = 4
    init_std: float = 0.02
