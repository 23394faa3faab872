"""A small reverse-mode autodiff engine over float64 numpy arrays.

Each op returns a ``Tensor`` that remembers its parents and a closure that
pushes the upstream gradient back to them. Calling ``backward()`` on a scalar
output walks that record once in reverse topological order; the record is
then released, so a second ``backward()`` on the same output is an error.
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self._consumed = False
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise TapeError(f"backward() needs a scalar output, got shape {self.data.shape}")
        if self._consumed:
            raise TapeError("tape already consumed; rebuild the graph before calling backward() again")
        order = _topological(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if not node.is_leaf:
                node._backward = None
                node._consumed = True
                node._parents = ()

    # operator sugar for the few cases the loss code needs
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed and node is not root:
            raise TapeError("graph contains a node from a consumed tape")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    parents = tuple(p for p in parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data, op=op)
    return Tensor(data, _parents=parents, _backward=backward, op=op)


def _push(t, g):
    if t.requires_grad:
        t._accumulate(g)


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.data.size != 1:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _push(a, g)
        _push(b, g if b.shape == a.shape else np.sum(g).reshape(b.shape))

    return _node(a.data + b.data, (a, b), back, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _push(a, g * b.data)
        _push(b, g * a.data)

    return _node(a.data * b.data, (a, b), back, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: _push(a, g * c), "scale")


def relu(x) -> Tensor:
    x = as_tensor(x)
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: _push(x, g * mask), "relu")


def sum(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return _node(np.sum(x.data), (x,), lambda g: _push(x, np.broadcast_to(g, x.shape).copy()), "sum")


def take(x, idx) -> Tensor:
    """Basic/fancy indexing; gradient scatters back (with accumulation on repeats)."""
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _push(x, full)

    return _node(x.data[idx], (x,), back, "take")


# -- layers --------------------------------------------------------------------

def conv1d(x, w, b) -> Tensor:
    """Same-length 1-D convolution (stride 1, zero padding ``(K-1)//2``).

    Shapes: x (B, C, T), w (O, C, K), b (O,) -> (B, O, T).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, C, T = x.shape
    O, C2, K = w.shape
    if C2 != C:
        raise ValueError(f"conv1d: input has {C} channels, kernel expects {C2}")
    pad = (K - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, K - 1 - pad)))
    # cols[b, t, c, k] = xp[b, c, t + k]
    cols = np.stack([xp[:, :, k:k + T] for k in range(K)], axis=-1).transpose(0, 2, 1, 3).reshape(B, T, C * K)
    wmat = w.data.reshape(O, C * K)
    out = (cols @ wmat.T).transpose(0, 2, 1) + b.data[None, :, None]

    def back(g):
        gt = g.transpose(0, 2, 1)  # (B, T, O)
        if w.requires_grad:
            _push(w, np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(O, C, K))
        if b.requires_grad:
            _push(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (gt @ wmat).reshape(B, T, C, K)
            dxp = np.zeros_like(xp)
            for k in range(K):
                dxp[:, :, k:k + T] += dcols[:, :, :, k].transpose(0, 2, 1)
            _push(x, dxp[:, :, pad:pad + T])

    return _node(out, (x, w, b), back, "conv1d")


class BatchNormState:
    """Running statistics for one batch-norm layer (mutated only in training mode)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over (batch, time) for x of shape (B, C, T)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    g_ = gamma.data[None, :, None]
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean[None, :, None]) * inv[None, :, None]

        def back(g):
            _push(x, g * g_ * inv[None, :, None])
            _push(gamma, np.sum(g * xhat, axis=(0, 2)))
            _push(beta, np.sum(g, axis=(0, 2)))

        return _node(g_ * xhat + beta.data[None, :, None], (x, gamma, beta), back, "batchnorm_eval")

    B, C, T = x.shape
    n = B * T
    mu = x.data.mean(axis=(0, 2))
    var = x.data.var(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    unbiased = var * n / (n - 1) if n > 1 else var
    state.running_var = (1 - m) * state.running_var + m * unbiased

    def back(g):
        _push(gamma, np.sum(g * xhat, axis=(0, 2)))
        _push(beta, np.sum(g, axis=(0, 2)))
        if x.requires_grad:
            gx = g * g_
            s1 = gx.sum(axis=(0, 2), keepdims=True)
            s2 = (gx * xhat).sum(axis=(0, 2), keepdims=True)
            _push(x, inv[None, :, None] / n * (n * gx - s1 - xhat * s2))

    return _node(g_ * xhat + beta.data[None, :, None], (x, gamma, beta), back, "batchnorm_train")


def max_pool1d(x, width: int = 2) -> Tensor:
    """Non-overlapping max pooling along time, floor mode; ties go to the first index."""
    x = as_tensor(x)
    B, C, T = x.shape
    To = T // width
    if To < 1:
        raise ValueError(f"max_pool1d: length {T} too short for width {width}")
    win = x.data[:, :, :To * width].reshape(B, C, To, width)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros((B, C, To, width))
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        full = np.zeros_like(x.data)
        full[:, :, :To * width] = gw.reshape(B, C, To * width)
        _push(x, full)

    return _node(out, (x,), back, "maxpool1d")


def global_avg_pool(x) -> Tensor:
    """(B, C, T) -> (B, C) mean over time."""
    x = as_tensor(x)
    T = x.shape[2]
    return _node(x.data.mean(axis=2), (x,),
                 lambda g: _push(x, np.repeat(g[:, :, None] / T, T, axis=2)), "gap")


def linear(x, w, b) -> Tensor:
    """x (B, F) @ w.T (F, O) + b."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)

    def back(g):
        _push(x, g @ w.data)
        _push(w, g.T @ x.data)
        _push(b, g.sum(axis=0))

    return _node(x.data @ w.data.T + b.data, (x, w, b), back, "linear")


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    x = as_tensor(x)
    if rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: _push(x, g * keep), "dropout")


def softmax(x) -> Tensor:
    """Row-wise softmax over the last axis of a (B, c) tensor."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _push(x, p * (g - np.sum(g * p, axis=-1, keepdims=True)))

    return _node(p, (x,), back, "softmax")


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    B = logits.shape[0]
    logp = log_softmax_np(logits.data)
    loss = -logp[np.arange(B), targets].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(B), targets] -= 1.0
        _push(logits, g * p / B)

    return _node(loss, (logits,), back, "cross_entropy")
