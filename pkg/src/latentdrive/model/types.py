"""Latent-space value types passed between model components."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor


@dataclass
class TokenSeq:
    """Token embeddings (..., n_tokens, d) with a per-sequence modality tag."""

    embeddings: Tensor
    modality: str

    @property
    def n_tokens(self):
        return self.embeddings.shape[-2]


@dataclass
class BevLatent:
    """Flattened BEV patch tokens (..., n_bev, d_latent)."""

    tokens: Tensor
    grid_hw: tuple[int, int]

    @property
    def n_tokens(self):
        return self.tokens.shape[-2]


@dataclass
class HiddenState:
    """Fixed-length shared latent summary (..., n_latents, d_latent)."""

    latents: Tensor


@dataclass
class TrajectorySet:
    """K candidate trajectories with mode logits and optional rewards.

    ``trajectories``: (..., K, horizon_fut, 2); ``mode_logits``: (..., K).
    ``rewards`` are plain floats in [0, 1], detached from any graph.
    """

    trajectories: Tensor
    mode_logits: Tensor
    rewards: np.ndarray | None = field(default=None)

    @property
    def k(self):
        return self.trajectories.shape[-3]
