"""Named parameter storage, freeze bookkeeping, and AdamW."""

from __future__ import annotations

from fnmatch import fnmatch

import numpy as np

from .autodiff import Tensor
from .errors import ConsistencyError


class ParameterStore:
    """Flat map from path-like names to parameter tensors.

    Frozen paths are excluded from optimizer updates and stay bit-identical
    across any number of steps. Read-only sharing across threads is safe;
    optimizer steps require exclusive access.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def add(self, name, array):
        if name in self._params:
            raise ConsistencyError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def n_values(self):
        return sum(t.size for t in self._params.values())

    def freeze(self, *patterns):
        """Freeze every parameter whose name matches one of the glob patterns."""
        for name in self._params:
            if any(fnmatch(name, p) for p in patterns):
                self.frozen.add(name)

    def unfreeze_all(self):
        self.frozen.clear()

    def set_frozen(self, patterns):
        """Replace the frozen set: freeze matches, leave the rest trainable."""
        self.frozen = {
            name
            for name in self._params
            if any(fnmatch(name, p) for p in patterns)
        }

    def is_frozen(self, name):
        return name in self.frozen

    def trainable_items(self):
        return [(n, t) for n, t in self.items() if n not in self.frozen]

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def set_requires_grad_from_frozen(self):
        """Skip graph recording through frozen parameters entirely."""
        for n, t in self._params.items():
            t.requires_grad = n not in self.frozen

    def state_arrays(self):
        return {n: t.data for n, t in self.items()}

    def load_state_arrays(self, arrays):
        for n, t in self._params.items():
            if n not in arrays:
                raise ConsistencyError(f"missing parameter in state: {n}")
            if arrays[n].shape != t.data.shape:
                raise ConsistencyError(f"shape mismatch loading {n}")
            t.data = arrays[n].astype(t.data.dtype).copy()


class AdamW:
    """Decoupled-weight-decay Adam over a ParameterStore.

    Moments persist across calls and survive checkpointing. Frozen
    parameters are never touched, and keep no moment state updates.
    """

    def __init__(self, store, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, clip_norm=None):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, grads=None):
        """One update over all non-frozen parameters.

        ``grads`` maps name -> ndarray; defaults to each tensor's
        accumulated ``.grad``. A missing gradient for a live parameter is a
        consistency error.
        """
        live = self.store.trainable_items()
        if grads is None:
            grads = {}
            for name, t in live:
                if t.grad is None:
                    raise ConsistencyError(f"no gradient for trainable parameter {name}")
                grads[name] = t.grad
        else:
            for name, _ in live:
                if name not in grads:
                    raise ConsistencyError(f"no gradient for trainable parameter {name}")

        if self.clip_norm is not None:
            total = np.sqrt(sum(float((grads[n] ** 2).sum()) for n, _ in live))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                grads = {n: grads[n] * scale for n, _ in live}

        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, tensor in live:
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(tensor.data)
                self.v[name] = np.zeros_like(tensor.data)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            tensor.data = tensor.data - self.lr * (update + self.weight_decay * tensor.data)

    def state(self):
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state(self, state):
        self.t = int(state["t"])
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}
