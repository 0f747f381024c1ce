"""Model component tests: tokenizers, encoder, future predictor, heads."""

import numpy as np
import pytest

from latentdrive import autodiff as ad
from latentdrive.autodiff import Tensor, grad_check
from latentdrive.errors import DimensionError
from latentdrive.model import DriveModel, ModelConfig
from latentdrive.model.backbone import patchify, unpatchify
from latentdrive.model.denoiser import euler_sample, fm_loss, fuse_latents
from latentdrive.model.heads import (act_loss, reward_loss,
                                     reward_weighted_action_loss, seg_loss)
from latentdrive.model.model import featurize
from latentdrive.model.types import BevLatent, HiddenState, TokenSeq, TrajectorySet
from latentdrive.world.generate import generate_episode
from latentdrive.world.types import WorldConfig

WC = WorldConfig()
MC = ModelConfig()


@pytest.fixture(scope="module")
def episodes():
    return [generate_episode(WC, [7000, i]) for i in range(4)]


@pytest.fixture(scope="module")
def model():
    return DriveModel(WC, MC, seed=0)


@pytest.fixture(scope="module")
def batch(episodes):
    return featurize(episodes)


class TestPatchify:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        raster = rng.integers(0, 4, size=(2, 32, 32))
        feats = patchify(raster, 4, 4)
        logits = Tensor(feats)
        back = unpatchify(logits, (32, 32), 4, 4).data
        assert np.array_equal(np.argmax(back, axis=-1), raster)

    def test_indivisible_grid_rejected(self):
        with pytest.raises(DimensionError):
            patchify(np.zeros((30, 32), dtype=np.int64), 4, 4)


class TestBackbone:
    def test_identical_patches_identical_tokens(self, model):
        raster = np.zeros((1, 32, 32), dtype=np.uint8)
        bev = model.backbone.tokenize_bev(raster)
        tok = bev.tokens.data[0]
        assert np.allclose(tok, tok[0])  # all patches identical -> same token

    def test_zero_history_action_tokens(self, model):
        zeros = np.zeros((1, WC.horizon_hist, 2))
        out = model.backbone.tokenize_actions(zeros).embeddings.data[0]
        expected = model.store["act_tok/proj/b"].data + model.store["act_tok/pos"].data
        assert np.allclose(out, expected)

    def test_fixed_length_latents_any_token_count(self, model):
        rng = np.random.default_rng(1)
        for n_obs in (70, 90):
            obs = TokenSeq(Tensor(rng.normal(size=(1, n_obs, MC.d_model))), "obs")
            bev = BevLatent(Tensor(rng.normal(size=(1, 64, MC.d_latent))), (32, 32))
            act = TokenSeq(Tensor(rng.normal(size=(1, 4, MC.d_model))), "action")
            cmd = TokenSeq(Tensor(rng.normal(size=(1, 1, MC.d_model))), "command")
            h = model.backbone.encode(obs, bev, act, cmd)
            assert h.latents.shape == (1, MC.n_latents, MC.d_latent)

    def test_cross_attend_residual_identity_with_zero_out(self, episodes):
        m = DriveModel(WC, MC, seed=3)
        m.store["xattn/attn/o/w"].data[:] = 0.0
        batch = featurize(episodes)
        bev = m.backbone.tokenize_bev(batch.rasters)
        h = HiddenState(Tensor(np.random.default_rng(0).normal(
            size=(len(episodes), MC.n_latents, MC.d_latent))))
        out = m.backbone.cross_attend_bev(bev, h)
        assert np.allclose(out.tokens.data, bev.tokens.data)

    def test_latent_width_mismatch(self, model):
        bev = BevLatent(Tensor(np.zeros((1, 64, MC.d_latent))), (32, 32))
        h = HiddenState(Tensor(np.zeros((1, 8, MC.d_latent + 1))))
        with pytest.raises(DimensionError):
            model.backbone.cross_attend_bev(bev, h)


class TestFeaturize:
    def test_future_matches_expert(self, episodes, batch):
        for i, ep in enumerate(episodes):
            assert np.allclose(batch.gt_future[i], ep.expert_traj.waypoints,
                               atol=1e-9)

    def test_out_of_range_anchor(self, episodes):
        with pytest.raises(ValueError):
            featurize(episodes, frame_index=WC.n_frames)

    def test_no_future_at_last_frame(self, episodes):
        b = featurize(episodes, frame_index=WC.horizon_hist + WC.horizon_fut)
        assert b.gt_future is None
        with pytest.raises(ValueError):
            b.gt_flat


class TestDenoiser:
    def test_zero_init_velocity_is_zero(self, model, batch):
        trunk = model.forward_trunk(batch)
        x = Tensor(np.random.default_rng(2).normal(size=trunk.bev_c.tokens.shape))
        v = model.dit.velocity(x, np.ones(batch.size), 25, trunk.bev_c, batch.gt_flat)
        assert np.allclose(v.data, 0.0)

    def test_step_index_bounds(self, model, batch):
        trunk = model.forward_trunk(batch)
        with pytest.raises(ValueError):
            model.dit.condition(0, 25, trunk.bev_c, batch.gt_flat)
        with pytest.raises(ValueError):
            model.dit.condition(26, 25, trunk.bev_c, batch.gt_flat)

    @pytest.mark.parametrize("n_steps", [1, 25])
    def test_euler_constant_velocity_exact(self, model, batch, n_steps):
        trunk = model.forward_trunk(batch)
        rng = np.random.default_rng(4)
        v_const = rng.normal(size=trunk.bev_c.tokens.shape)

        class ConstField:
            def velocity(self, x, k, n, bev_c, act):
                return Tensor(v_const.copy())

        x0 = rng.normal(size=trunk.bev_c.tokens.shape)
        out = euler_sample(ConstField(), trunk.bev_c, batch.gt_flat, n_steps,
                           rng, x0=x0)
        err = np.abs(out.tokens.data - (x0 + v_const)).max()
        assert err < 1e-6

    def test_history_branch_residual_identity_at_init(self, model, batch):
        trunk = model.forward_trunk(batch)
        out = model.branch1(trunk.h, trunk.bev_c, trunk.act)
        assert np.allclose(out.tokens.data, trunk.bev_c.tokens.data)

    def test_fm_loss_init_near_analytic_baseline(self, model, batch):
        trunk = model.forward_trunk(batch)
        target = BevLatent(trunk.bev_c.tokens.detach(), trunk.bev_c.grid_hw)
        rng = np.random.default_rng(0)
        losses = [fm_loss(model.dit, target, trunk.bev_c, batch.gt_flat, rng).data
                  for _ in range(50)]
        baseline = 1.0 + float((target.tokens.data ** 2).mean())
        assert np.mean(losses) == pytest.approx(baseline, rel=0.1)

    def test_fuse_mean_and_gate(self):
        rng = np.random.default_rng(5)
        a = BevLatent(Tensor(rng.normal(size=(1, 4, 8))), (8, 8))
        b = BevLatent(Tensor(rng.normal(size=(1, 4, 8))), (8, 8))
        mean = fuse_latents(a, b, "mean").tokens.data
        assert np.allclose(mean, 0.5 * (a.tokens.data + b.tokens.data))
        gate = Tensor(np.zeros(()))
        gated = fuse_latents(a, b, "gate", gate).tokens.data
        assert np.allclose(gated, mean)   # sigmoid(0) = 0.5
        with pytest.raises(ValueError):
            fuse_latents(a, b, "nope")

    def test_fuse_shape_mismatch(self):
        a = BevLatent(Tensor(np.zeros((1, 4, 8))), (8, 8))
        b = BevLatent(Tensor(np.zeros((1, 5, 8))), (8, 8))
        with pytest.raises(DimensionError):
            fuse_latents(a, b, "mean")


class TestSegHead:
    def test_softmax_is_distribution(self, model, batch):
        trunk = model.forward_trunk(batch)
        logits = model.seg_head(trunk.bev_c)
        probs = ad.softmax(logits, axis=-1).data
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
        assert (probs >= 0).all()

    def test_target_out_of_range(self, model, batch):
        trunk = model.forward_trunk(batch)
        logits = model.seg_head(trunk.bev_c)
        bad = np.full((batch.size, 32, 32), WC.n_classes, dtype=np.int64)
        with pytest.raises(ValueError):
            seg_loss(logits, bad)


def _traj_set(trajs, logits):
    return TrajectorySet(trajectories=Tensor(np.asarray(trajs, dtype=np.float64)),
                         mode_logits=Tensor(np.asarray(logits, dtype=np.float64)))


class TestActionLoss:
    def test_perfect_mode_zero_regression(self):
        gt = np.random.default_rng(0).normal(size=(1, 8, 2))
        far = gt + 5.0
        pred = _traj_set(np.stack([gt, far], axis=1), np.zeros((1, 2)))
        loss = act_loss(pred, gt)
        assert loss.data == pytest.approx(np.log(2.0))  # only CE term left

    def test_k1_plain_mse(self):
        gt = np.ones((1, 8, 2))
        pred = _traj_set(np.zeros((1, 1, 8, 2)), np.zeros((1, 1)))
        assert act_loss(pred, gt).data == pytest.approx(1.0)

    def test_tie_breaks_to_lowest_index(self):
        gt = np.zeros((1, 8, 2))
        mode = np.ones((8, 2))
        pred = _traj_set(np.stack([mode, mode.copy()], axis=0)[None],
                         np.array([[0.0, 0.0]]))
        pred.trajectories.requires_grad = True
        pred.mode_logits.requires_grad = True
        pred.mode_logits.zero_grad()
        act_loss(pred, gt).backward()
        g = pred.mode_logits.grad[0]
        assert g[0] < 0 < g[1]   # CE pushes logit 0 up: index 0 won the tie

    def test_zero_action_params_zero_trajectories(self, episodes):
        m = DriveModel(WC, MC, seed=9)
        for name, t in m.store.items():
            if name.startswith("act_head/"):
                t.data[:] = 0.0
        b = featurize(episodes)
        trunk = m.forward_trunk(b)
        pred = m.predict_actions(trunk)
        assert np.allclose(pred.trajectories.data, 0.0)


class TestRewardHead:
    def test_zero_init_scores_half(self, model, batch):
        trunk = model.forward_trunk(batch)
        fresh = DriveModel(WC, MC, seed=1)
        t2 = fresh.forward_trunk(batch)
        r = fresh.reward_head(t2.bev_c, t2.bev_c, batch.gt_flat)
        assert np.allclose(r.data, 0.5)

    def test_reward_loss_values(self):
        assert reward_loss(Tensor(np.array([1.0])), np.array([1.0])).data == 0.0
        assert reward_loss(Tensor(np.array([0.0])), np.array([1.0])).data == 1.0

    def test_reward_gt_range_validated(self):
        with pytest.raises(ValueError):
            reward_loss(Tensor(np.array([0.5])), np.array([1.5]))

    def test_reward_head_grad_check(self, batch):
        m = DriveModel(WC, ModelConfig(init_std=0.2), seed=2)
        trunk = m.forward_trunk(batch)
        b_im = BevLatent(trunk.bev_c.tokens.detach(), trunk.bev_c.grid_hw)
        b_hist = BevLatent(Tensor(trunk.bev_c.tokens.data * 0.5), trunk.bev_c.grid_hw)
        r_gt = np.full(batch.size, 0.3)

        def f(_):
            r = m.reward_head(b_im, b_hist, batch.gt_flat)
            return reward_loss(r, r_gt)

        rng = np.random.default_rng(0)
        for name in ("reward/mlp1/w", "reward/mlp2/w", "reward/traj_in/w"):
            assert grad_check(f, m.store[name], sample=8, rng=rng) < 1e-6


class TestRewardWeightedLoss:
    def _pred(self, rng, b=2, k=3):
        return _traj_set(rng.normal(size=(b, k, 8, 2)), rng.normal(size=(b, k)))

    def test_all_ones_equals_unweighted_sum(self):
        rng = np.random.default_rng(0)
        pred = self._pred(rng)
        gt = rng.normal(size=(2, 8, 2))
        ones = np.ones((2, 3))
        weighted = reward_weighted_action_loss(pred, gt, ones)
        diff = pred.trajectories.data - gt[:, None]
        unweighted = (diff ** 2).mean(axis=(-1, -2)).sum(axis=-1).mean()
        assert weighted.data == pytest.approx(unweighted, abs=0)

    def test_zero_rewards_zero_gradient(self):
        rng = np.random.default_rng(1)
        pred = self._pred(rng)
        pred.trajectories.requires_grad = True
        pred.trajectories.zero_grad()
        gt = rng.normal(size=(2, 8, 2))
        loss = reward_weighted_action_loss(pred, gt, np.zeros((2, 3)))
        assert loss.data == 0.0
        loss.backward()
        assert np.all(pred.trajectories.grad == 0.0)

    def test_selector_rewards(self):
        rng = np.random.default_rng(2)
        pred = self._pred(rng)
        gt = rng.normal(size=(2, 8, 2))
        sel = np.zeros((2, 3))
        sel[:, 0] = 1.0
        loss = reward_weighted_action_loss(pred, gt, sel)
        diff = pred.trajectories.data[:, 0] - gt
        assert loss.data == pytest.approx((diff ** 2).mean(axis=(-1, -2)).mean())

    def test_gradient_scales_linearly_with_reward(self):
        rng = np.random.default_rng(3)
        gt = rng.normal(size=(1, 8, 2))
        base = rng.normal(size=(1, 2, 8, 2))

        def grad_norm(r0):
            pred = _traj_set(base.copy(), np.zeros((1, 2)))
            pred.trajectories.requires_grad = True
            pred.trajectories.zero_grad()
            rewards = np.array([[r0, 0.0]])
            reward_weighted_action_loss(pred, gt, rewards).backward()
            return float(np.linalg.norm(pred.trajectories.grad))

        assert grad_norm(0.8) == pytest.approx(2.0 * grad_norm(0.4), rel=1e-12)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(4)
        pred = self._pred(rng)
        with pytest.raises(DimensionError):
            reward_weighted_action_loss(pred, rng.normal(size=(2, 8, 2)),
                                        np.ones((2, 4)))


class TestNoiseInjection:
    def test_zero_scale_bit_identical(self, model, batch):
        a = model.forward_trunk(batch).bev_c.tokens.data
        b = model.forward_trunk(batch, noise_scale=0.0).bev_c.tokens.data
        assert np.array_equal(a, b)

    def test_noise_perturbs_latents(self, model, batch):
        rng = np.random.default_rng(0)
        a = model.forward_trunk(batch).bev_c.tokens.data
        b = model.forward_trunk(batch, noise_scale=5.0, noise_rng=rng).bev_c.tokens.data
        assert not np.allclose(a, b)

    def test_noise_requires_rng(self, model, batch):
        with pytest.raises(ValueError):
            model.forward_trunk(batch, noise_scale=1.0)
