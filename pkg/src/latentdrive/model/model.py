"""Full model: tokenizers, shared-latent trunk, future predictor, heads.

All parameters live in one ParameterStore so the optimizer, the freezing
masks, and the checkpoint code see a single flat namespace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError
from ..optim import ParameterStore
from ..world.generate import _world_to_ego
from ..world.types import COMMANDS, Episode
from .backbone import Backbone
from .config import ModelConfig
from .denoiser import DiT, HistoryBranch, euler_sample, fuse_latents
from .heads import ActionHead, RewardHead, SegHead
from .types import BevLatent, HiddenState, TokenSeq, TrajectorySet


@dataclass
class Batch:
    """Featurized episodes anchored at one frame index per episode."""

    rasters: np.ndarray       # (B, H, W) uint8 class ids
    hist_wp: np.ndarray       # (B, horizon_hist, 2) past ego positions, ego frame
    cmd_ids: np.ndarray       # (B,) int
    gt_future: np.ndarray | None   # (B, horizon_fut, 2) ego frame, or None
    episodes: list[Episode]

    @property
    def size(self):
        return self.rasters.shape[0]

    @property
    def gt_flat(self):
        if self.gt_future is None:
            raise ValueError("batch has no future ground truth")
        b = self.gt_future.shape[0]
        return self.gt_future.reshape(b, -1)


def featurize(episodes, frame_index=None) -> Batch:
    """Build model inputs from episodes, anchored at ``frame_index``.

    The anchor defaults to the current frame. History waypoints are the
    ego positions over the preceding ``horizon_hist`` frames and the
    ground-truth future the following ``horizon_fut`` frames, both
    expressed in the anchor frame's ego coordinates. The future is None
    when it would run past the episode end.
    """
    cfg = episodes[0].config
    fi = cfg.horizon_hist if frame_index is None else int(frame_index)
    if not cfg.horizon_hist <= fi < cfg.n_frames:
        raise ValueError(f"frame index {fi} outside episode")
    has_future = fi + cfg.horizon_fut < cfg.n_frames

    rasters, hists, cmds, futs = [], [], [], []
    for ep in episodes:
        if ep.config.n_frames != cfg.n_frames:
            raise DimensionError("episodes in a batch must share horizons")
        anchor = ep.frames[fi].ego
        past = np.array([[f.ego.x, f.ego.y] for f in ep.frames[fi - cfg.horizon_hist:fi]])
        rasters.append(ep.frames[fi].bev)
        hists.append(_world_to_ego(past, anchor))
        cmds.append(COMMANDS.index(ep.command))
        if has_future:
            fut = np.array([[f.ego.x, f.ego.y] for f in ep.frames[fi + 1:fi + 1 + cfg.horizon_fut]])
            futs.append(_world_to_ego(fut, anchor))
    return Batch(
        rasters=np.stack(rasters),
        hist_wp=np.stack(hists),
        cmd_ids=np.asarray(cmds, dtype=np.int64),
        gt_future=np.stack(futs) if has_future else None,
        episodes=list(episodes),
    )


@dataclass
class TrunkOutput:
    h: HiddenState
    bev: BevLatent
    bev_c: BevLatent
    act: TokenSeq


class DriveModel:
    def __init__(self, world_cfg, model_cfg: ModelConfig | None = None, seed=0):
        self.wc = world_cfg
        self.mc = model_cfg or ModelConfig()
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(self.store, self.wc, self.mc, rng)
        self.branch1 = HistoryBranch(self.store, "branch1", self.wc, self.mc, rng)
        self.dit = DiT(self.store, "dit", self.wc, self.mc, rng)
        self.seg_head = SegHead(self.store, "seg_head", self.wc, self.mc, rng)
        self.act_head = ActionHead(self.store, "act_head", self.wc, self.mc, rng)
        self.reward_head = RewardHead(self.store, "reward", self.wc, self.mc, rng)
        self.fuse_gate = self.store.add("fuse/gate", np.zeros(()))

    def forward_trunk(self, batch: Batch, noise_scale=0.0, noise_rng=None) -> TrunkOutput:
        """Encode a batch into the shared latent and condition the BEV
        tokens on it. ``noise_scale`` > 0 perturbs the pooled latents with
        Gaussian noise (inference-time robustness probe); at 0 the rng is
        untouched and the output is bit-identical to the unperturbed path.
        """
        bb = self.backbone
        bev = bb.tokenize_bev(batch.rasters)
        obs = bb.tokenize_obs(batch.rasters)
        act = bb.tokenize_actions(batch.hist_wp)
        cmd = bb.tokenize_command(batch.cmd_ids)
        h = bb.encode(obs, bev, act, cmd)
        if noise_scale > 0.0:
            if noise_rng is None:
                raise ValueError("noise_scale > 0 requires an rng")
            noise = noise_rng.normal(0.0, noise_scale, size=h.latents.shape)
            h = HiddenState(h.latents + Tensor(noise))
        bev_c = bb.cross_attend_bev(bev, h)
        return TrunkOutput(h=h, bev=bev, bev_c=bev_c, act=act)

    def predict_actions(self, trunk: TrunkOutput) -> TrajectorySet:
        return self.act_head(trunk.h, trunk.bev_c, trunk.act)

    def predict_history_future(self, trunk: TrunkOutput) -> BevLatent:
        return self.branch1(trunk.h, trunk.bev_c, trunk.act)

    def imagine(self, trunk: TrunkOutput, act_flat, rng, n_steps=None,
                x0=None) -> BevLatent:
        """Action-conditioned imagined future latent: Euler-integrated
        generative branch fused with the deterministic history branch."""
        n = n_steps or self.mc.flow_steps
        b_gen = euler_sample(self.dit, trunk.bev_c, act_flat, n, rng, x0=x0)
        b_hist = self.predict_history_future(trunk)
        return fuse_latents(b_hist, b_gen, self.mc.fuse_mode, self.fuse_gate)

    def score_candidates(self, trunk: TrunkOutput, pred: TrajectorySet, rng,
                         n_steps=None):
        """Imagine one future per candidate mode and score each; returns a
        (B, K) reward Tensor (graph only through the reward head)."""
        b, k = pred.mode_logits.shape
        trajs = pred.trajectories.data          # detached: rewards do not
        scores = []                             # backprop into the planner
        for m in range(k):
            flat = trajs[:, m].reshape(b, -1)
            imagined = self.imagine(trunk, flat, rng, n_steps=n_steps)
            score = self.reward_head(imagined, trunk.bev_c, flat)
            scores.append(ad.reshape(score, (b, 1)))
        return ad.concat(scores, axis=-1)
