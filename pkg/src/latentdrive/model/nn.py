"""Reusable network building blocks over a ParameterStore.

Modules register their parameters under a name prefix at construction and
hold direct references to the Tensors; the optimizer and checkpoint loader
swap ``.data`` in place, so references stay valid.
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


class Linear:
    def __init__(self, store, name, d_in, d_out, rng, std=0.02, zero=False):
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, std, size=(d_in, d_out))
        self.w = store.add(f"{name}/w", w)
        self.b = store.add(f"{name}/b", np.zeros(d_out))

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, store, name, d, eps=1e-5):
        self.gain = store.add(f"{name}/gain", np.ones(d))
        self.bias = store.add(f"{name}/bias", np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class PlainNorm:
    """LayerNorm without learned affine (used inside adaptively-modulated
    blocks, where scale/shift come from the conditioning signal)."""

    def __init__(self, d, eps=1e-5):
        self.gain = Tensor(np.ones(d))
        self.bias = Tensor(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding:
    def __init__(self, store, name, n, d, rng, std=0.02):
        self.table = store.add(f"{name}/table", rng.normal(0.0, std, size=(n, d)))

    def __call__(self, idx):
        return ad.take(self.table, np.asarray(idx))


class MultiHeadAttention:
    """Batched multi-head attention over (..., T, d) inputs."""

    def __init__(self, store, name, d, n_heads, rng, std=0.02, zero_out=False):
        assert d % n_heads == 0
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.wq = Linear(store, f"{name}/q", d, d, rng, std)
        self.wk = Linear(store, f"{name}/k", d, d, rng, std)
        self.wv = Linear(store, f"{name}/v", d, d, rng, std)
        self.wo = Linear(store, f"{name}/o", d, d, rng, std, zero=zero_out)

    def _split(self, x):
        lead = x.shape[:-2]
        t = x.shape[-2]
        x = ad.reshape(x, (*lead, t, self.n_heads, self.d_head))
        return ad.swapaxes(x, -2, -3)   # (..., H, T, dh)

    def _merge(self, x):
        x = ad.swapaxes(x, -2, -3)
        lead = x.shape[:-2]
        return ad.reshape(x, (*lead[:-1], lead[-1], self.n_heads * self.d_head))

    def __call__(self, q_in, kv_in):
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(kv_in))
        v = self._split(self.wv(kv_in))
        out = ad.softmax_attention(q, k, v, 1.0 / math.sqrt(self.d_head))
        return self.wo(self._merge(out))


class MLP:
    def __init__(self, store, name, d, d_hidden, rng, std=0.02, d_out=None, zero_out=False):
        self.fc1 = Linear(store, f"{name}/fc1", d, d_hidden, rng, std)
        self.fc2 = Linear(store, f"{name}/fc2", d_hidden, d_out or d, rng, std, zero=zero_out)

    def __call__(self, x):
        return self.fc2(ad.gelu(self.fc1(x)))


class TransformerBlock:
    """Pre-norm self-attention + MLP with residuals."""

    def __init__(self, store, name, d, n_heads, rng, mlp_ratio=4, std=0.02):
        self.norm1 = LayerNorm(store, f"{name}/norm1", d)
        self.attn = MultiHeadAttention(store, f"{name}/attn", d, n_heads, rng, std)
        self.norm2 = LayerNorm(store, f"{name}/norm2", d)
        self.mlp = MLP(store, f"{name}/mlp", d, mlp_ratio * d, rng, std)

    def __call__(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.mlp(self.norm2(x))


def timestep_embedding(t, dim, max_period=100.0):
    """Sinusoidal embedding of fractional timesteps t in [0, 1]; (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :] * max_period
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
