"""Task heads on the shared latent: segmentation, actions, reward.

Loss helpers live here too. Reward weights entering the weighted action
loss are plain floats (stop-gradient): the reward model only learns through
its own regression loss, otherwise it could game the action loss by
predicting zero reward.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError
from .backbone import unpatchify
from .nn import Linear, MLP
from .types import BevLatent, HiddenState, TokenSeq, TrajectorySet


class SegHead:
    """Per-token linear map to patch x patch x n_classes logits."""

    def __init__(self, store, name, world_cfg, model_cfg, rng):
        self.wc = world_cfg
        self.mc = model_cfg
        out_dim = model_cfg.patch**2 * world_cfg.n_classes
        self.proj = Linear(store, f"{name}/proj", model_cfg.d_latent, out_dim, rng,
                           model_cfg.init_std)

    def __call__(self, b: BevLatent):
        if b.tokens.shape[-1] != self.mc.d_latent:
            raise DimensionError("seg head latent width mismatch")
        tokens = self.proj(b.tokens)
        return unpatchify(tokens, b.grid_hw, self.mc.patch, self.wc.n_classes)


def seg_loss(logits, target_raster):
    """Mean cross-entropy over cells; logits (B, H, W, C), targets (B, H, W)."""
    target = np.asarray(target_raster)
    if target.ndim == 2:
        target = target[None]
    if logits.shape[:-1] != target.shape:
        raise DimensionError("segmentation logits/target shape mismatch")
    return ad.cross_entropy(logits, target)


class ActionHead:
    """Pooled latent context -> K trajectory modes + mode logits."""

    def __init__(self, store, name, world_cfg, model_cfg, rng):
        mc = model_cfg
        self.k = mc.k_modes
        self.fut = world_cfg.horizon_fut
        self.act_pool = Linear(store, f"{name}/act_pool", mc.d_model, mc.d_latent, rng, mc.init_std)
        d_ctx = 3 * mc.d_latent
        out_dim = self.k * (self.fut * 2 + 1)
        self.mlp = MLP(store, f"{name}/mlp", d_ctx, 4 * d_ctx, rng, mc.init_std, d_out=out_dim)

    def __call__(self, h: HiddenState, b: BevLatent, act_hist: TokenSeq) -> TrajectorySet:
        ctx = ad.concat(
            [
                h.latents.mean(axis=-2),
                b.tokens.mean(axis=-2),
                self.act_pool(act_hist.embeddings).mean(axis=-2),
            ],
            axis=-1,
        )
        out = self.mlp(ctx)
        bsz = out.shape[0]
        out = ad.reshape(out, (bsz, self.k, self.fut * 2 + 1))
        trajs = ad.reshape(out[:, :, : self.fut * 2], (bsz, self.k, self.fut, 2))
        logits = ad.reshape(out[:, :, self.fut * 2:], (bsz, self.k))
        return TrajectorySet(trajectories=trajs, mode_logits=logits)


def _per_mode_mse(pred: TrajectorySet, gt):
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim == 2:
        gt = gt[None]
    if pred.trajectories.shape[-2:] != gt.shape[-2:]:
        raise DimensionError("trajectory/ground-truth shape mismatch")
    diff = pred.trajectories - Tensor(gt[:, None])
    return (diff * diff).mean(axis=(-1, -2))     # (B, K)


def act_loss(pred: TrajectorySet, gt):
    """Winner-take-all regression + mode classification.

    The closest mode (lowest index on ties) takes the squared-error
    gradient; mode logits are trained toward the winning index. K=1 skips
    the classification term.
    """
    mode_mse = _per_mode_mse(pred, gt)
    winners = np.argmin(mode_mse.data, axis=-1)  # first minimum: lowest index
    reg = ad.gather_last(mode_mse, winners).mean()
    if pred.k == 1:
        return reg
    return reg + ad.cross_entropy(pred.mode_logits, winners)


class RewardHead:
    """Scores a candidate: pooled imagined/history latents, their gap, and
    the trajectory, through an MLP and sigmoid. Zero-initialized output, so
    the untrained score is exactly 0.5."""

    def __init__(self, store, name, world_cfg, model_cfg, rng):
        mc = model_cfg
        self.traj_in = Linear(store, f"{name}/traj_in", world_cfg.horizon_fut * 2,
                              mc.d_latent, rng, mc.init_std)
        self.mlp1 = Linear(store, f"{name}/mlp1", 4 * mc.d_latent, 2 * mc.d_latent,
                           rng, mc.init_std)
        self.mlp2 = Linear(store, f"{name}/mlp2", 2 * mc.d_latent, 1, rng,
                           mc.init_std, zero=True)

    def __call__(self, b_imagined: BevLatent, b_hist: BevLatent, traj_flat):
        if b_imagined.tokens.shape != b_hist.tokens.shape:
            raise DimensionError("reward head latent shape mismatch")
        traj = traj_flat if isinstance(traj_flat, Tensor) else Tensor(np.asarray(traj_flat))
        pooled_im = b_imagined.tokens.mean(axis=-2)
        pooled_hist = b_hist.tokens.mean(axis=-2)
        ctx = ad.concat(
            [pooled_im, pooled_hist, pooled_im - pooled_hist, self.traj_in(traj)],
            axis=-1,
        )
        score = self.mlp2(ad.gelu(self.mlp1(ctx)))
        return ad.sigmoid(ad.reshape(score, (score.shape[0],)))


def reward_loss(r_hat, r_gt):
    """Squared error against the simulator score; r_gt must lie in [0, 1]."""
    r_gt = np.asarray(r_gt, dtype=np.float64)
    if np.any(r_gt < 0.0) or np.any(r_gt > 1.0):
        raise ValueError("ground-truth reward outside [0, 1]")
    diff = r_hat - Tensor(np.broadcast_to(r_gt, r_hat.shape).copy())
    return (diff * diff).mean()


def reward_weighted_action_loss(pred: TrajectorySet, gt, rewards):
    """Sum over modes of reward-weighted squared waypoint error (batch mean).

    ``rewards`` (B, K) must be detached scalars; gradients reach the
    trajectory parameters only, scaled linearly by the weights.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    mode_mse = _per_mode_mse(pred, gt)
    if rewards.shape != mode_mse.shape:
        raise DimensionError("rewards must be shaped (batch, K)")
    return (mode_mse * Tensor(rewards)).sum(axis=-1).mean()
