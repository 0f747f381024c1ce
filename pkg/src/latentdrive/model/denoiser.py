"""Two-branch future-latent predictor.

Branch 1 is a deterministic history-conditioned predictor; branch 2 is a
small adaptively-modulated transformer trained by flow matching on a linear
(rectified) interpolation path and integrated with plain Euler steps at
sampling time. Modulation gates and output projections start at zero, so
the untrained velocity field is exactly zero and branch 1 starts as the
identity on its residual stream.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError
from .nn import Linear, MLP, MultiHeadAttention, PlainNorm, TransformerBlock, timestep_embedding
from .types import BevLatent, HiddenState, TokenSeq


class HistoryBranch:
    def __init__(self, store, name, world_cfg, model_cfg, rng):
        mc = model_cfg
        std = mc.init_std
        n_bev = (world_cfg.grid_h // mc.patch) * (world_cfg.grid_w // mc.patch)
        self.pos = store.add(f"{name}/pos", rng.normal(0.0, std, size=(n_bev, mc.d_latent)))
        self.act_in = Linear(store, f"{name}/act_in", mc.d_model, mc.d_latent, rng, std)
        self.xattn = MultiHeadAttention(store, f"{name}/xattn", mc.d_latent, mc.dit_heads, rng, std)
        self.blocks = [
            TransformerBlock(store, f"{name}/block{i}", mc.d_latent, mc.dit_heads,
                             rng, mc.mlp_ratio, std)
            for i in range(2)
        ]
        self.out = Linear(store, f"{name}/out", mc.d_latent, mc.d_latent, rng, std, zero=True)

    def __call__(self, h: HiddenState, bev_c: BevLatent, act_hist: TokenSeq) -> BevLatent:
        if bev_c.tokens.shape[-1] != h.latents.shape[-1]:
            raise DimensionError("latent width mismatch in history branch")
        ctx = ad.concat([h.latents, self.act_in(act_hist.embeddings)], axis=-2)
        x = bev_c.tokens + self.pos
        x = x + self.xattn(x, ctx)
        for block in self.blocks:
            x = block(x)
        return BevLatent(bev_c.tokens + self.out(x), bev_c.grid_hw)


def _chunk(m, d, i):
    return ad.reshape(m[:, i * d:(i + 1) * d], (m.shape[0], 1, d))


def _modulate(x, shift, scale):
    return x * (scale + 1.0) + shift


class DiTBlock:
    """Transformer block whose norm scale/shift and residual gates come
    from the conditioning vector; gates zero-initialized (identity start)."""

    def __init__(self, store, name, d, d_cond, n_heads, rng, mlp_ratio, std):
        self.d = d
        self.norm1 = PlainNorm(d)
        self.norm2 = PlainNorm(d)
        self.attn = MultiHeadAttention(store, f"{name}/attn", d, n_heads, rng, std)
        self.mlp = MLP(store, f"{name}/mlp", d, mlp_ratio * d, rng, std)
        # conditioning -> (shift1, scale1, gate1, shift2, scale2, gate2)
        self.mod = Linear(store, f"{name}/mod", d_cond, 6 * d, rng, std, zero=True)

    def __call__(self, x, c):
        m = self.mod(c)
        d = self.d
        h = _modulate(self.norm1(x), _chunk(m, d, 0), _chunk(m, d, 1))
        x = x + _chunk(m, d, 2) * self.attn(h, h)
        h = _modulate(self.norm2(x), _chunk(m, d, 3), _chunk(m, d, 4))
        return x + _chunk(m, d, 5) * self.mlp(h)


class DiT:
    """Action-conditioned velocity network over BEV-latent-shaped samples."""

    def __init__(self, store, name, world_cfg, model_cfg, rng):
        mc = model_cfg
        std = mc.init_std
        self.mc = mc
        self.n_steps_default = mc.flow_steps
        n_bev = (world_cfg.grid_h // mc.patch) * (world_cfg.grid_w // mc.patch)
        d, dc = mc.d_latent, mc.d_cond
        self.pos = store.add(f"{name}/pos", rng.normal(0.0, std, size=(n_bev, d)))
        self.time_in = Linear(store, f"{name}/time_in", dc, dc, rng, std)
        self.act_in = Linear(store, f"{name}/act_in", 2 * world_cfg.horizon_fut, dc, rng, std)
        self.bev_in = Linear(store, f"{name}/bev_in", d, dc, rng, std)
        self.cond_mlp = MLP(store, f"{name}/cond", dc, dc, rng, std)
        self.blocks = [
            DiTBlock(store, f"{name}/block{i}", d, dc, mc.dit_heads, rng, mc.mlp_ratio, std)
            for i in range(mc.dit_depth)
        ]
        self.final_norm = PlainNorm(d)
        self.final_mod = Linear(store, f"{name}/final_mod", dc, 2 * d, rng, std, zero=True)
        self.final_out = Linear(store, f"{name}/final_out", d, d, rng, std, zero=True)

    def condition(self, k, n_steps, bev_c: BevLatent, act_flat):
        k = np.atleast_1d(np.asarray(k))
        if np.any(k < 1) or np.any(k > n_steps):
            raise ValueError(f"flow step index outside [1, {n_steps}]")
        t_emb = Tensor(timestep_embedding(k / float(n_steps), self.mc.d_cond))
        act = act_flat if isinstance(act_flat, Tensor) else Tensor(np.asarray(act_flat))
        bev_summary = bev_c.tokens.mean(axis=-2)
        c = self.time_in(t_emb) + self.act_in(act) + self.bev_in(bev_summary)
        return self.cond_mlp(ad.gelu(c))

    def velocity(self, x, k, n_steps, bev_c: BevLatent, act_flat):
        """Predicted velocity toward the data latent; same shape as x."""
        c = self.condition(k, n_steps, bev_c, act_flat)
        h = x + self.pos
        for block in self.blocks:
            h = block(h, c)
        d = self.mc.d_latent
        m = self.final_mod(c)
        h = _modulate(self.final_norm(h), _chunk(m, d, 0), _chunk(m, d, 1))
        return self.final_out(h)


def fm_loss(dit: DiT, target: BevLatent, bev_c: BevLatent, act_flat, rng,
            n_steps=None):
    """Flow-matching regression loss on the linear path.

    Samples x0 ~ N(0, I) and k ~ Uniform{1..N} per batch element, forms
    x_k = (1 - k/N) x0 + (k/N) target, and regresses the predicted velocity
    onto the constant path velocity (target - x0).
    """
    n_steps = n_steps or dit.n_steps_default
    tgt = target.tokens.data
    b = tgt.shape[0]
    x0 = rng.standard_normal(tgt.shape)
    k = rng.integers(1, n_steps + 1, size=b)
    t = (k / float(n_steps))[:, None, None]
    x_k = Tensor((1.0 - t) * x0 + t * tgt)
    pred = dit.velocity(x_k, k, n_steps, bev_c, act_flat)
    diff = pred - Tensor(tgt - x0)
    return (diff * diff).mean()


def euler_sample(dit: DiT, bev_c: BevLatent, act_flat, n_steps, rng,
                 x0=None) -> BevLatent:
    """Integrate the velocity field with N Euler steps from Gaussian noise.

    Deterministic given (rng state or x0, parameters, inputs). The evolving
    sample is fed back as the network input at timestep k/N.
    """
    shape = bev_c.tokens.shape
    x = x0 if x0 is not None else rng.standard_normal(shape)
    x = Tensor(np.asarray(x, dtype=np.float64))
    inv_n = 1.0 / float(n_steps)
    for k in range(1, n_steps + 1):
        ks = np.full(shape[0], k)
        v = dit.velocity(x, ks, n_steps, bev_c, act_flat)
        x = x + v * inv_n
    return BevLatent(x, bev_c.grid_hw)


def fuse_latents(b_hist: BevLatent, b_gen: BevLatent, mode="mean", gate=None) -> BevLatent:
    """Combine the two branch outputs: elementwise mean, or a learned
    convex gate (weight = sigmoid(gate) on the history branch)."""
    if b_hist.tokens.shape != b_gen.tokens.shape:
        raise DimensionError("fuse_latents shape mismatch")
    if mode == "mean":
        out = (b_hist.tokens + b_gen.tokens) * 0.5
    elif mode == "gate":
        w = ad.sigmoid(gate)
        out = b_hist.tokens * w + b_gen.tokens * (1.0 - w)
    else:
        raise ValueError(f"unknown fuse mode: {mode}")
    return BevLatent(out, b_hist.grid_hw)
