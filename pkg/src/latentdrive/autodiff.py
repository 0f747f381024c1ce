"""Dense-tensor algebra with tape-based reverse-mode autodiff.

Everything runs on numpy arrays. Float64 is the default dtype so that
finite-difference gradient checks are meaningful; float32 can be requested
per-tensor for speed at the cost of check accuracy. The graph is dynamic:
every forward op records a closure that scatters the upstream gradient into
its inputs, and ``Tensor.backward`` walks the recorded graph in reverse
topological order. A graph is confined to a single thread for the duration
of one forward/backward pass.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_DTYPE = np.float64


class Tensor:
    """A dense array plus an optional gradient accumulator.

    Non-leaf tensors additionally carry the parent links and backward
    closure recorded by the op that produced them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def check_finite(self):
        if not np.all(np.isfinite(self.data)):
            raise NumericError("non-finite values in tensor")
        return self

    # -- graph plumbing --------------------------------------------------

    def _make_child(self, data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            g = np.empty_like(self.data)
            np.copyto(g, grad)
            self.grad = g
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        ``grad`` defaults to ones (scalar outputs in practice). Gradients
        accumulate by summation into every ``requires_grad`` leaf.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError("seed gradient shape mismatch")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / other)
        return mul(self, reciprocal(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    # -- shape/reduction conveniences -----------------------------------

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return a._make_child(out_data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return a._make_child(out_data, (a, b), backward)


def mul_scalar(a, s):
    a = as_tensor(a)
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return a._make_child(a.data * s, (a,), backward)


def reciprocal(a):
    a = as_tensor(a)
    out_data = 1.0 / a.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g * out_data * out_data)

    return a._make_child(out_data, (a,), backward)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out_data = a.data**p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return a._make_child(out_data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return a._make_child(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return a._make_child(np.log(a.data), (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return a._make_child(out_data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return a._make_child(out_data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return a._make_child(out_data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh-approximated GELU; smooth, so finite differences stay clean."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * (x2 * x))
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
            da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a._accumulate(g * da)

    return a._make_child(out_data, (a,), backward)


# -- matmul / shape ------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy batch semantics (leading dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2:
        raise DimensionError("matmul requires at least 1-D @ 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dims disagree: {a.shape} @ {b.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            ad = a.data[..., None, :] if a.ndim == 1 else a.data
            gg = g[..., None, :] if a.ndim == 1 else g
            gb = np.matmul(np.swapaxes(ad, -1, -2), gg)
            b._accumulate(_unbroadcast(gb, b.shape))

    return a._make_child(out_data, (a, b), backward)


def reshape(a, shape):
    a = as_tensor(a)
    old_shape = a.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape))

    return a._make_child(a.data.reshape(shape), (a,), backward)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, ax1, ax2))

    return a._make_child(np.swapaxes(a.data, ax1, ax2), (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return a._make_child(np.transpose(a.data, axes), (a,), backward)


def take(a, idx):
    """Basic/advanced indexing; gradient scattered back with add.at."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return a._make_child(out_data, (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    return tensors[0]._make_child(out_data, tuple(tensors), backward)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return a._make_child(out_data, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul_scalar(reduce_sum(a, axis, keepdims), 1.0 / float(n))


# -- neural-net primitives ----------------------------------------------


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return a._make_child(out_data, (a,), backward)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    return a._make_child(out_data, (a,), backward)


def gather_last(a, idx):
    """Pick one entry along the last axis per leading position."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise DimensionError("gather index shape must match leading dims")
    lead = np.indices(idx.shape, sparse=True)
    out_data = a.data[(*lead, idx)]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (*lead, idx), g)
            a._accumulate(full)

    return a._make_child(out_data, (a,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean/unit variance, then affine.

    Single fused node: the closed-form backward avoids the chain of
    temporaries a composite formulation would record.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d <= 1:
        raise DimensionError("layer_norm needs feature dim > 1")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm gain/bias must have shape (d,)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gx - m1 - xhat * m2) * inv)

    return x._make_child(out_data, (x, gain, bias), backward)


def softmax_attention(q, k, v, scale):
    """Scaled dot-product attention; rows of weights sum to 1."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError("query/key feature dims disagree")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("key/value sequence lengths disagree")
    if k.shape[-2] == 0:
        raise DimensionError("empty key sequence")
    logits = matmul(q, swapaxes(k, -1, -2)) * float(scale)
    weights = softmax(logits, axis=-1)
    return matmul(weights, v)


def cross_entropy(logits, targets):
    """Mean negative log-likelihood over all leading positions.

    ``logits``: (..., n_classes), ``targets``: integer array (...).
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    n_classes = logits.shape[-1]
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= n_classes:
        raise ValueError("target class id out of range")
    logp = log_softmax(logits, axis=-1)
    picked = gather_last(logp, targets)
    return -picked.mean()


# -- gradient checking ---------------------------------------------------


def grad_check(f, x, h=1e-5, sample=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. When ``sample`` is given, only
    that many randomly chosen coordinates are probed (needed for large
    parameter vectors where the full sweep is prohibitive).
    """
    x = as_tensor(x)
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if not np.isfinite(out.data).all():
        raise NumericError("non-finite function value in grad_check")
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    n = flat.size
    if sample is not None and sample < n:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=sample, replace=False)
    else:
        coords = range(n)

    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError("non-finite function value in grad_check")
        numeric = (fp - fm) / (2.0 * h)
        ana = analytic.reshape(-1)[i]
        rel = abs(ana - numeric) / (abs(ana) + abs(numeric) + 1e-12)
        worst = max(worst, rel)
    return worst
