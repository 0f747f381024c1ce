"""Three-stage progressive curriculum.

Stage 1 trains the encoder, cross-attention, the deterministic future
branch, and the segmentation/action heads. Stage 2 freezes everything but
the generative branch and regresses its velocity field against re-encoded
future latents. Stage 3 freezes both world-model branches and the encoder,
then refines the reward model and the action head against simulator
scores of imagined rollouts.

Every training step draws its randomness from a seed sequence of
(base_seed, stage, step), so a resumed run replays the exact step stream
of an uninterrupted one regardless of where it was cut.
"""

from __future__ import annotations

import csv
import os
from fnmatch import fnmatch
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConsistencyError, NumericError
from ..model.denoiser import fm_loss
from ..model.heads import (act_loss, reward_loss, reward_weighted_action_loss,
                           seg_loss)
from ..model.model import Batch, DriveModel, featurize
from ..model.types import BevLatent
from ..optim import AdamW
from ..world.scoring import score_pdm
from ..world.types import Trajectory
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

# trainable parameter-path patterns per stage (everything else is frozen)
STAGE_TRAINABLE = {
    1: ("backbone/*", "obs_tok/*", "bev_tok/*", "act_tok/*", "cmd_tok/*",
        "xattn/*", "branch1/*", "seg_head/*", "act_head/*"),
    2: ("dit/*",),
    3: ("reward/*", "act_head/*"),
}
BACKBONE_PATTERNS = ("backbone/*", "obs_tok/*", "bev_tok/*", "act_tok/*", "cmd_tok/*")


def set_stage_trainable(model: DriveModel, stage, freeze_backbone=False,
                        extra_trainable=()):
    keep = STAGE_TRAINABLE[stage] + tuple(extra_trainable)
    if stage == 1 and freeze_backbone:
        keep = tuple(p for p in keep if p not in BACKBONE_PATTERNS)
    if stage == 3 and model.mc.fuse_mode == "gate":
        keep = keep + ("fuse/gate",)
    all_names = [n for n, _ in model.store.items()]
    frozen = [n for n in all_names if not any(fnmatch(n, p) for p in keep)]
    model.store.set_frozen(frozen)
    model.store.set_requires_grad_from_frozen()


def step_rng(base_seed, stage, step):
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(stage), int(step)]))


def _check_finite(loss):
    if not np.isfinite(loss.data):
        raise NumericError("non-finite training loss; step aborted")


def encode_future_target(model: DriveModel, episodes) -> BevLatent:
    """Re-encode the future frame with its own history and command through
    the frozen stage-1 pipeline; returns a detached latent."""
    wc = model.wc
    fb = featurize(episodes, frame_index=wc.horizon_hist + wc.horizon_fut)
    trunk = model.forward_trunk(fb)
    return BevLatent(trunk.bev_c.tokens.detach(), trunk.bev_c.grid_hw)


def stage1_losses(model: DriveModel, batch: Batch):
    wc = model.wc
    trunk = model.forward_trunk(batch)
    cur_rasters = batch.rasters
    fut_rasters = np.stack(
        [ep.frames[wc.horizon_hist + wc.horizon_fut].bev for ep in batch.episodes])
    l_seg_now = seg_loss(model.seg_head(trunk.bev_c), cur_rasters)
    b_fut = model.predict_history_future(trunk)
    l_seg_fut = seg_loss(model.seg_head(b_fut), fut_rasters)
    l_act = act_loss(model.predict_actions(trunk), batch.gt_future)
    return {"seg": l_seg_now + l_seg_fut, "act": l_act}


def stage2_losses(model: DriveModel, batch: Batch, rng):
    target = encode_future_target(model, batch.episodes)
    trunk = model.forward_trunk(batch)
    return {"fm": fm_loss(model.dit, target, trunk.bev_c, batch.gt_flat, rng)}


class PdmsCache:
    """Memoizes simulator scores by (episode identity, trajectory bytes)."""

    def __init__(self, max_entries=200000):
        self._cache = {}
        self.max_entries = max_entries

    def score(self, ep, ep_key, wpts):
        key = (ep_key, wpts.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            hit = score_pdm(ep, Trajectory(wpts)).pdms
            if len(self._cache) < self.max_entries:
                self._cache[key] = hit
        return hit


def stage3_losses(model: DriveModel, batch: Batch, ep_keys, rng, cache: PdmsCache,
                  n_flow_steps=None, force_rewards=None):
    wc = model.wc
    trunk = model.forward_trunk(batch)
    pred = model.predict_actions(trunk)
    r_hat = model.score_candidates(trunk, pred, rng, n_steps=n_flow_steps)

    trajs = pred.trajectories.data
    b, k = trajs.shape[:2]
    r_gt = np.empty((b, k))
    for i in range(b):
        for m in range(k):
            r_gt[i, m] = cache.score(batch.episodes[i], ep_keys[i], trajs[i, m])

    weights = r_hat.data if force_rewards is None else np.broadcast_to(
        np.asarray(force_rewards, dtype=np.float64), (b, k))
    l_act = reward_weighted_action_loss(pred, batch.gt_future, weights)
    l_rew = reward_loss(r_hat, r_gt)

    fut_rasters = np.stack(
        [ep.frames[wc.horizon_hist + wc.horizon_fut].bev for ep in batch.episodes])
    imagined = model.imagine(trunk, batch.gt_flat, rng, n_steps=n_flow_steps)
    l_seg = seg_loss(model.seg_head(imagined), fut_rasters)
    return {"act": l_act, "rew": l_rew, "seg": l_seg}


def combined(losses, weights=None):
    weights = weights or {}
    total = None
    for name, l in losses.items():
        w = float(weights.get(name, 1.0))
        term = l if w == 1.0 else l * w
        total = term if total is None else total + term
    return total


@dataclass
class StageRunState:
    """Mutable progress of one stage, checkpointable mid-flight."""

    stage: int
    step: int = 0
    losses: list = field(default_factory=list)


def run_stage(model: DriveModel, stage, train_eps, scfg, base_seed,
              n_steps=None, start_step=0, opt=None, freeze_backbone=False,
              log_rows=None, flow_steps_train=None):
    """Run (part of) one stage; returns (optimizer, loss history)."""
    set_stage_trainable(model, stage, freeze_backbone=freeze_backbone)
    if opt is None:
        opt = AdamW(model.store, lr=scfg.lr)
    if n_steps is None:
        n_steps = stage_step_budget(scfg, len(train_eps))
    cache = PdmsCache()
    history = []
    ep_keys = list(range(len(train_eps)))
    for step in range(start_step, n_steps):
        rng = step_rng(base_seed, stage, step)
        idx = rng.choice(len(train_eps), size=min(scfg.batch_size, len(train_eps)),
                         replace=False)
        batch = featurize([train_eps[i] for i in idx])
        model.store.zero_grad()
        if stage == 1:
            losses = stage1_losses(model, batch)
        elif stage == 2:
            losses = stage2_losses(model, batch, rng)
        else:
            losses = stage3_losses(model, batch, [ep_keys[i] for i in idx], rng,
                                   cache, n_flow_steps=flow_steps_train)
        total = combined(losses, scfg.loss_weights)
        _check_finite(total)
        total.backward()
        opt.step()
        history.append(float(total.data))
        if log_rows is not None:
            log_rows.append([stage, step, float(total.data)]
                            + [float(l.data) for _, l in sorted(losses.items())])
    return opt, history


def run_joint_stage(model: DriveModel, train_eps, scfg2, scfg3, base_seed,
                    n_steps, start_step=0, opt=None, log_rows=None,
                    flow_steps_train=None):
    """Non-progressive variant: generative-branch and refinement objectives
    trained simultaneously after stage 1, sharing one trainable set."""
    keep = STAGE_TRAINABLE[2] + STAGE_TRAINABLE[3]
    all_names = [n for n, _ in model.store.items()]
    model.store.set_frozen([n for n in all_names
                            if not any(fnmatch(n, p) for p in keep)])
    model.store.set_requires_grad_from_frozen()
    if opt is None:
        opt = AdamW(model.store, lr=scfg2.lr)
    cache = PdmsCache()
    history = []
    for step in range(start_step, n_steps):
        rng = step_rng(base_seed, 23, step)   # distinct stream from stages 2/3
        idx = rng.choice(len(train_eps), size=min(scfg2.batch_size, len(train_eps)),
                         replace=False)
        batch = featurize([train_eps[i] for i in idx])
        model.store.zero_grad()
        losses = stage2_losses(model, batch, rng)
        losses.update(stage3_losses(model, batch, list(idx), rng, cache,
                                    n_flow_steps=flow_steps_train))
        total = combined(losses, scfg3.loss_weights)
        _check_finite(total)
        total.backward()
        opt.step()
        history.append(float(total.data))
        if log_rows is not None:
            log_rows.append([23, step, float(total.data)]
                            + [float(l.data) for _, l in sorted(losses.items())])
    return opt, history


def stage_step_budget(scfg, n_train):
    if scfg.steps is not None:
        return scfg.steps
    steps_per_epoch = max(1, n_train // scfg.batch_size)
    return scfg.epochs * steps_per_epoch


def model_checkpoint(model: DriveModel, opt: AdamW | None, stage, base_seed,
                     step=0) -> Checkpoint:
    params = {n: t.data.copy() for n, t in model.store.items()}
    opt_state = {}
    if opt is not None:
        opt_state["t"] = np.asarray(float(opt.t))
        for n, m in opt.m.items():
            opt_state[f"m/{n}"] = m.copy()
        for n, v in opt.v.items():
            opt_state[f"v/{n}"] = v.copy()
    meta = {"stage": float(stage), "base_seed": float(base_seed),
            "step": float(step)}
    return Checkpoint(params=params, opt_state=opt_state, meta=meta)


def restore_model(model: DriveModel, ckpt: Checkpoint):
    model.store.load_state_arrays(ckpt.params)


def restore_optimizer(model: DriveModel, ckpt: Checkpoint, lr) -> AdamW:
    opt = AdamW(model.store, lr=lr)
    if "t" in ckpt.opt_state:
        opt.t = int(ckpt.opt_state["t"])
        for name, arr in ckpt.opt_state.items():
            if name.startswith("m/"):
                opt.m[name[2:]] = arr.copy()
            elif name.startswith("v/"):
                opt.v[name[2:]] = arr.copy()
    return opt


def run_curriculum(cfg, model: DriveModel, train_eps, out_dir, seed,
                   progressive=True, freeze_backbone=False, eval_fn=None,
                   flow_steps_train=None):
    """Execute the curriculum; saves one checkpoint per stage plus a loss
    CSV. ``eval_fn(model, stage_label)``, when given, is called after each
    stage and its results collected into the returned dict.
    """
    os.makedirs(out_dir, exist_ok=True)
    log_rows = []
    results = {"eval": {}, "checkpoints": {}}

    def after(stage_label, opt, stage_no, step):
        path = os.path.join(out_dir, f"stage{stage_label}.dwva")
        save_checkpoint(model_checkpoint(model, opt, stage_no, seed, step), path)
        results["checkpoints"][str(stage_label)] = path
        if eval_fn is not None:
            results["eval"][str(stage_label)] = eval_fn(model, stage_label)

    s1, s2, s3 = (cfg.stage(1), cfg.stage(2), cfg.stage(3))
    n1 = stage_step_budget(s1, len(train_eps))
    n2 = stage_step_budget(s2, len(train_eps))
    n3 = stage_step_budget(s3, len(train_eps))

    opt, _ = run_stage(model, 1, train_eps, s1, seed, n_steps=n1,
                       freeze_backbone=freeze_backbone, log_rows=log_rows)
    after(1, opt, 1, n1)

    if progressive:
        opt, _ = run_stage(model, 2, train_eps, s2, seed, n_steps=n2,
                           log_rows=log_rows)
        after(2, opt, 2, n2)
        opt, _ = run_stage(model, 3, train_eps, s3, seed, n_steps=n3,
                           log_rows=log_rows, flow_steps_train=flow_steps_train)
        after(3, opt, 3, n3)
    else:
        opt, _ = run_joint_stage(model, train_eps, s2, s3, seed,
                                 n_steps=n2 + n3, log_rows=log_rows,
                                 flow_steps_train=flow_steps_train)
        after("joint", opt, 23, n2 + n3)

    with open(os.path.join(out_dir, "losses.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stage", "step", "total", "components..."])
        w.writerows(log_rows)
    return results


def resume_stage(model: DriveModel, ckpt_path, stage, train_eps, scfg,
                 n_steps=None, log_rows=None, freeze_backbone=False,
                 flow_steps_train=None):
    """Continue a stage from a mid-stage checkpoint; replays the identical
    step stream the uninterrupted run would have produced."""
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.stage != stage:
        raise ConsistencyError(
            f"checkpoint is from stage {ckpt.stage}, requested stage {stage}")
    restore_model(model, ckpt)
    set_stage_trainable(model, stage, freeze_backbone=freeze_backbone)
    opt = restore_optimizer(model, ckpt, scfg.lr)
    base_seed = int(ckpt.meta["base_seed"])
    start = int(ckpt.meta["step"])
    return run_stage(model, stage, train_eps, scfg, base_seed, n_steps=n_steps,
                     start_step=start, opt=opt, freeze_backbone=freeze_backbone,
                     log_rows=log_rows, flow_steps_train=flow_steps_train)
