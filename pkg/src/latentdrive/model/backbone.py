"""Modality tokenizers and the shared-latent encoder.

All modality tokens are concatenated, processed by a small pre-norm
transformer, projected down, and summarized by a fixed set of learnable
latent queries into the shared hidden state that every downstream branch
reads. BEV tokens deliberately carry no position embedding at tokenization
time (identical patches map to identical tokens); spatial identity is
re-introduced where the tokens are consumed.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError
from .nn import Embedding, Linear, MultiHeadAttention, TransformerBlock
from .types import BevLatent, HiddenState, TokenSeq


def patchify(rasters, patch, n_classes):
    """(B, H, W) class-id rasters -> (B, n_patches, patch*patch*n_classes)
    one-hot patch features (plain numpy; inputs carry no gradient)."""
    rasters = np.asarray(rasters)
    if rasters.ndim == 2:
        rasters = rasters[None]
    b, h, w = rasters.shape
    if h % patch or w % patch:
        raise DimensionError("grid not divisible by patch size")
    onehot = np.eye(n_classes, dtype=np.float64)[rasters]          # (B,H,W,C)
    nh, nw = h // patch, w // patch
    x = onehot.reshape(b, nh, patch, nw, patch, n_classes)
    x = x.transpose(0, 1, 3, 2, 4, 5)                              # (B,nh,nw,p,p,C)
    return x.reshape(b, nh * nw, patch * patch * n_classes)


def unpatchify(tokens, grid_hw, patch, n_classes):
    """Inverse of patchify on a Tensor of per-token logits."""
    h, w = grid_hw
    nh, nw = h // patch, w // patch
    b = tokens.shape[0]
    x = ad.reshape(tokens, (b, nh, nw, patch, patch, n_classes))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, h, w, n_classes))


class Backbone:
    def __init__(self, store, world_cfg, model_cfg, rng):
        mc = model_cfg
        wc = world_cfg
        self.mc = mc
        self.wc = wc
        self.patch_dim = mc.patch * mc.patch * wc.n_classes
        self.n_bev = (wc.grid_h // mc.patch) * (wc.grid_w // mc.patch)
        std = mc.init_std

        self.bev_proj = Linear(store, "bev_tok/proj", self.patch_dim, mc.d_latent, rng, std)
        self.obs_proj = Linear(store, "obs_tok/proj", self.patch_dim, mc.d_model, rng, std)
        self.obs_pos = store.add(
            "obs_tok/pos", rng.normal(0.0, std, size=(self.n_bev, mc.d_model))
        )
        self.act_proj = Linear(store, "act_tok/proj", 2, mc.d_model, rng, std)
        self.act_pos = store.add(
            "act_tok/pos", rng.normal(0.0, std, size=(wc.horizon_hist, mc.d_model))
        )
        self.cmd_embed = Embedding(store, "cmd_tok/embed", 3, mc.d_model, rng, std)

        self.bev_in = Linear(store, "backbone/bev_in", mc.d_latent, mc.d_model, rng, std)
        self.bev_pos = store.add(
            "backbone/bev_pos", rng.normal(0.0, std, size=(self.n_bev, mc.d_model))
        )
        self.blocks = [
            TransformerBlock(store, f"backbone/block{i}", mc.d_model, mc.n_heads,
                             rng, mc.mlp_ratio, std)
            for i in range(mc.n_enc_blocks)
        ]
        self.latent_proj = Linear(store, "backbone/latent_proj", mc.d_model, mc.d_latent, rng, std)
        self.queries = store.add(
            "backbone/queries", rng.normal(0.0, std, size=(mc.n_latents, mc.d_latent))
        )
        self.latent_attn = MultiHeadAttention(
            store, "backbone/latent_attn", mc.d_latent, mc.n_heads, rng, std
        )

        self.xattn_pos = store.add(
            "xattn/pos", rng.normal(0.0, std, size=(self.n_bev, mc.d_latent))
        )
        self.xattn = MultiHeadAttention(store, "xattn/attn", mc.d_latent, mc.n_heads, rng, std)

    # -- tokenizers ------------------------------------------------------

    def tokenize_bev(self, rasters) -> BevLatent:
        feats = patchify(rasters, self.mc.patch, self.wc.n_classes)
        if feats.shape[-1] != self.patch_dim:
            raise DimensionError("raster does not match configured grid")
        return BevLatent(self.bev_proj(Tensor(feats)), (self.wc.grid_h, self.wc.grid_w))

    def tokenize_obs(self, rasters) -> TokenSeq:
        feats = patchify(rasters, self.mc.patch, self.wc.n_classes)
        return TokenSeq(self.obs_proj(Tensor(feats)) + self.obs_pos, "obs")

    def tokenize_actions(self, hist_waypoints) -> TokenSeq:
        """(B, horizon_hist, 2) past ego positions -> action tokens."""
        hist_waypoints = np.asarray(hist_waypoints, dtype=np.float64)
        if hist_waypoints.shape[-2] != self.wc.horizon_hist:
            raise DimensionError("action history length mismatch")
        emb = self.act_proj(Tensor(hist_waypoints)) + self.act_pos
        return TokenSeq(emb, "action")

    def tokenize_command(self, cmd_ids) -> TokenSeq:
        emb = self.cmd_embed(np.asarray(cmd_ids, dtype=np.int64)[:, None])
        return TokenSeq(emb, "command")

    # -- encoder ---------------------------------------------------------

    def encode(self, obs: TokenSeq, bev: BevLatent, act: TokenSeq,
               cmd: TokenSeq) -> HiddenState:
        bev_in = self.bev_in(bev.tokens) + self.bev_pos
        x = ad.concat([obs.embeddings, bev_in, act.embeddings, cmd.embeddings], axis=-2)
        if x.shape[-2] == 0:
            raise DimensionError("empty encoder input")
        for block in self.blocks:
            x = block(x)
        h_tilde = self.latent_proj(x)
        latents = self.queries + self.latent_attn(self.queries, h_tilde)
        return HiddenState(latents)

    def cross_attend_bev(self, bev: BevLatent, h: HiddenState) -> BevLatent:
        if bev.tokens.shape[-1] != h.latents.shape[-1]:
            raise DimensionError("bev/hidden latent width mismatch")
        q = bev.tokens + self.xattn_pos
        return BevLatent(bev.tokens + self.xattn(q, h.latents), bev.grid_hw)
