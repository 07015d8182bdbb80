"""Dense tensors with reverse-mode automatic differentiation.

Everything the model computes with lives here: a numpy-backed Tensor that
records a tape during the forward pass, the ops the transformer needs, the
Adam optimizer with linear warmup, and a finite-difference gradient checker.

Design notes:
  - f32 by default, f64 when verifying gradients (finite differences are
    unreliable in f32).
  - Every op validates that its output is finite and fails fast naming the
    op; a silent NaN would poison every downstream check.
  - The tape is rebuilt on every forward pass; tensors on a live tape are
    never mutated in place.
"""

from __future__ import annotations

import numpy as np


class NumericsError(ValueError):
    """Shape mismatch, non-finite value, or other numeric contract breach."""


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op}'")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array plus optional gradient, participating in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, _prev=()):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _prev)
        self.grad = None
        self._backward = None
        self._prev = tuple(_prev)

    # ---- bookkeeping ----

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accum(self, g: np.ndarray):
        g = g.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor over the recorded tape."""
        if grad is None:
            if self.data.size != 1:
                raise NumericsError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
            else:
                stack.append((node, True))
                for p in node._prev:
                    if id(p) not in seen:
                        stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- arithmetic ----

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(_check_finite(self.data + other.data, "add"),
                     _prev=(self, other))
        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))
        out._backward = bwd
        return out

    def __sub__(self, other):
        return self + (_as_tensor(other, self.dtype) * -1.0)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(_check_finite(self.data * other.data, "mul"),
                     _prev=(self, other))
        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))
        out._backward = bwd
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def sum(self, axis=None, keepdims=False):
        out = Tensor(np.sum(self.data, axis=axis, keepdims=keepdims),
                     _prev=(self,))
        def bwd(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accum(np.broadcast_to(g, self.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.shape).copy())
        out._backward = bwd
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _prev=(self,))
        def bwd(g):
            if self.requires_grad:
                self._accum(g.reshape(self.shape))
        out._backward = bwd
        return out

    def transpose(self, *axes):
        axes = axes or None
        out = Tensor(np.transpose(self.data, axes), _prev=(self,))
        def bwd(g):
            if self.requires_grad:
                inv = np.argsort(axes) if axes else None
                self._accum(np.transpose(g, inv))
        out._backward = bwd
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], _prev=(self,))
        def bwd(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accum(full)
        out._backward = bwd
        return out


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# ---- ops ----

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with gradients to both operands."""
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise NumericsError(
            f"matmul inner dims differ: {a.data.shape} x {b.data.shape}")
    out = Tensor(_check_finite(a.data @ b.data, "matmul"), _prev=(a, b))
    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.shape))
    out._backward = bwd
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max subtraction)."""
    if x.data.shape == () or x.data.shape[axis] == 0:
        raise NumericsError("softmax over an empty axis")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(_check_finite(s, "softmax"), _prev=(x,))
    def bwd(g):
        if x.requires_grad:
            dot = np.sum(g * s, axis=axis, keepdims=True)
            x._accum(s * (g - dot))
    out._backward = bwd
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis, then affine (gamma, beta)."""
    if gamma.data.shape[-1] != x.data.shape[-1]:
        raise NumericsError("layer_norm gamma/beta must match last-axis size")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.var(x.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(_check_finite(xhat * gamma.data + beta.data, "layer_norm"),
                 _prev=(x, gamma, beta))
    def bwd(g):
        n = x.data.shape[-1]
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            dx = (gx - np.mean(gx, axis=-1, keepdims=True)
                  - xhat * np.mean(gx * xhat, axis=-1, keepdims=True)) * inv
            x._accum(dx)
    out._backward = bwd
    return out


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    c = float(np.sqrt(2.0 / np.pi))
    u = c * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)
    out = Tensor(_check_finite(y, "gelu"), _prev=(x,))
    def bwd(g):
        if x.requires_grad:
            du = c * (1.0 + 3 * 0.044715 * x.data ** 2)
            dy = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * du
            x._accum(g * dy)
    out._backward = bwd
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; gradient scatters back."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], _prev=(table,))
    def bwd(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            table._accum(full)
    out._backward = bwd
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _prev=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    def bwd(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, gs in zip(tensors, splits):
            if t.requires_grad:
                t._accum(gs)
    out._backward = bwd
    return out


def cross_entropy(logits: Tensor, targets, pad_id: int):
    """Mean negative log-likelihood over non-pad targets.

    Returns (loss: scalar Tensor, n_tokens: int). Pad positions contribute
    zero loss and zero gradient.
    """
    targets = np.asarray(targets)
    flat_logits = logits.data.reshape(-1, logits.data.shape[-1])
    flat_targets = targets.reshape(-1)
    vocab = flat_logits.shape[-1]
    live = flat_targets != pad_id
    n_tokens = int(live.sum())
    if n_tokens == 0:
        raise NumericsError("cross_entropy: all targets are pad")
    if flat_targets[live].min() < 0 or flat_targets[live].max() >= vocab:
        raise NumericsError("cross_entropy: target id out of range")
    m = np.max(flat_logits, axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(flat_logits - m), axis=-1))
    tgt_safe = np.where(live, flat_targets, 0)
    nll = lse - flat_logits[np.arange(len(flat_targets)), tgt_safe]
    loss_val = float(np.sum(nll[live]) / n_tokens)
    out = Tensor(np.asarray(loss_val, dtype=logits.dtype), _prev=(logits,))
    def bwd(g):
        if logits.requires_grad:
            probs = np.exp(flat_logits - m - (lse - m[:, 0])[:, None])
            probs[np.arange(len(flat_targets)), tgt_safe] -= 1.0
            probs[~live] = 0.0
            logits._accum((g * probs / n_tokens).reshape(logits.shape))
    out._backward = bwd
    _check_finite(out.data, "cross_entropy")
    return out, n_tokens


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or rng is None (eval mode)."""
    if p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * Tensor(mask)


# ---- optimizer ----

class AdamState:
    """Per-parameter Adam moments plus the shared schedule knobs.

    Effective learning rate ramps linearly from 0 to `lr` over
    `warmup_steps` updates.
    """

    def __init__(self, params: dict, lr=1e-5, beta1=0.9, beta2=0.999,
                 eps=1e-8, warmup_steps=100):
        self.step = 0
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.warmup_steps = warmup_steps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One Adam update with bias correction and linear warmup, in place."""
    state.step += 1
    t = state.step
    if state.warmup_steps > 0:
        lr_t = state.lr * min(1.0, t / state.warmup_steps)
    else:
        lr_t = state.lr
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        p.data = p.data - lr_t * mhat / (np.sqrt(vhat) + state.eps)


# ---- verification ----

def grad_check(f, params: dict, h: float = 1e-5, n_samples: int = 50,
               seed: int = 0) -> float:
    """Max relative error of reverse-mode grads vs central differences.

    `f(params) -> scalar Tensor` must be deterministic; params should be
    f64 for a meaningful answer. Samples `n_samples` coordinates across
    all parameters.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    loss = f(params)
    loss.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    names = sorted(params)
    sizes = np.array([params[k].data.size for k in names])
    total = sizes.sum()
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    max_rel = 0.0
    for flat in picks:
        ki = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        name = names[ki]
        offset = int(flat - (np.cumsum(sizes)[ki] - sizes[ki]))
        p = params[name]
        orig = p.data.reshape(-1)[offset]
        p.data.reshape(-1)[offset] = orig + h
        fp = float(f(params).data)
        p.data.reshape(-1)[offset] = orig - h
        fm = float(f(params).data)
        p.data.reshape(-1)[offset] = orig
        numeric = (fp - fm) / (2 * h)
        a = float(analytic[name].reshape(-1)[offset])
        denom = max(abs(a), abs(numeric), 1e-8)
        max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel
