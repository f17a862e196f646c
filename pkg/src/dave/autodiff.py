"""Small reverse-mode autodiff over numpy arrays.

Graphs are built dynamically on every forward pass. All values are float64.
Only the operations needed by the recurrent agent nets, hypernetwork mixers
and the auto-encoder are provided.
"""
from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    # make numpy defer to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def power(a, exponent: float):
    a = as_tensor(a)
    return _make(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def matmul(a, b):
    """Matrix product; leading dimensions broadcast like ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx):
    a = as_tensor(a)
    items = idx if isinstance(idx, tuple) else (idx,)
    advanced = any(isinstance(i, (list, np.ndarray)) for i in items)

    def backward(g):
        out = np.zeros_like(a.data)
        if advanced:
            np.add.at(out, idx, g)
        else:
            out[idx] += g
        return (out,)

    return _make(a.data[idx], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    pos = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(pos, 1.0, neg_part + alpha),))


def tabs(a):
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def softmax_and_softmin(logits, axis=-1):
    """Return ``(softmax(x), softmax(-x))``: the ego and anti-ego distributions."""
    logits = as_tensor(logits)
    return softmax(logits, axis), softmax(-logits, axis)


def cross_entropy(logits, target, reduction="mean"):
    """Negative log-likelihood of integer ``target`` under ``softmax(logits)``.

    ``logits`` has classes on the last axis; ``target`` has the leading shape.
    A 1-d logit vector with an int target gives a scalar.
    """
    logits = as_tensor(logits)
    n = logits.shape[-1]
    target = np.asarray(target)
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: target shape {target.shape} vs logits {logits.shape}")
    if np.any(target < 0) or np.any(target >= n):
        raise IndexError(f"cross_entropy: target index out of range [0, {n})")
    onehot = np.eye(n)[target]
    nll = -(log_softmax(logits) * onehot).sum(axis=-1)
    if reduction == "none":
        return nll
    if reduction == "sum":
        return nll.sum()
    return nll.mean()


def mse(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).mean()


def gru_step(x, h, params):
    """One GRU update; ``x``/``h`` are vectors or row batches.

    ``params`` maps ``w_ir w_iz w_in`` (in x hid), ``w_hr w_hz w_hn`` (hid x hid)
    and ``b_ir b_iz b_in b_hr b_hz b_hn`` (hid,) to tensors.
    """
    p = params
    x, h = as_tensor(x), as_tensor(h)
    hid = p["w_hr"].shape[0]
    if x.shape[-1] != p["w_ir"].shape[0] or h.shape[-1] != hid:
        raise ShapeError(
            f"gru_step: input {x.shape} / hidden {h.shape} do not match "
            f"weights {p['w_ir'].shape} / {p['w_hr'].shape}"
        )
    single = x.ndim == 1
    if single:
        x, h = x.reshape(1, -1), h.reshape(1, -1)
    names = ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn")
    w = {k: as_tensor(p[k]).data for k in names}
    xd, hd = x.data, h.data

    def _sig(a):
        return 0.5 * (1.0 + np.tanh(0.5 * a))

    r = _sig(xd @ w["w_ir"] + w["b_ir"] + hd @ w["w_hr"] + w["b_hr"])
    z = _sig(xd @ w["w_iz"] + w["b_iz"] + hd @ w["w_hz"] + w["b_hz"])
    hn = hd @ w["w_hn"] + w["b_hn"]
    n = np.tanh(xd @ w["w_in"] + w["b_in"] + r * hn)
    out = (1.0 - z) * n + z * hd

    # fused: one graph node per step, gradients by hand
    def backward(g):
        dan = g * (1.0 - z) * (1.0 - n * n)
        daz = g * (hd - n) * z * (1.0 - z)
        dhn = dan * r
        dar = dan * hn * r * (1.0 - r)
        dx = dar @ w["w_ir"].T + daz @ w["w_iz"].T + dan @ w["w_in"].T
        dh = g * z + dar @ w["w_hr"].T + daz @ w["w_hz"].T + dhn @ w["w_hn"].T
        return (
            dx, dh,
            xd.T @ dar, xd.T @ daz, xd.T @ dan, hd.T @ dar, hd.T @ daz, hd.T @ dhn,
            dar.sum(0), daz.sum(0), dan.sum(0), dar.sum(0), daz.sum(0), dhn.sum(0),
        )

    res = _make(out, (x, h) + tuple(as_tensor(p[k]) for k in names), backward)
    return res.reshape(-1) if single else res


def clip_global_norm(params, max_norm=10.0):
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class RMSProp:
    """RMSProp without momentum: ``v = a v + (1-a) g^2``, ``p -= lr g / (sqrt(v) + eps)``."""

    def __init__(self, params, lr=5e-4, alpha=0.99, eps=1e-5):
        self.params = list(params)
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.square_avg = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        if len(self.square_avg) != len(self.params):
            raise ValueError("optimizer state is not aligned with its parameters")
        for p, v in zip(self.params, self.square_avg):
            if v.shape != p.shape:
                raise ValueError(f"optimizer state shape {v.shape} != parameter shape {p.shape}")
            if p.grad is None:
                continue
            g = p.grad
            v *= self.alpha
            v += (1.0 - self.alpha) * g * g
            p.data -= self.lr * g / (np.sqrt(v) + self.eps)

    def state_dict(self):
        return {"square_avg": [v.copy() for v in self.square_avg]}

    def load_state_dict(self, state):
        avgs = state["square_avg"]
        if len(avgs) != len(self.params):
            raise ValueError("optimizer state is not aligned with its parameters")
        self.square_avg = [np.array(v, dtype=np.float64) for v in avgs]
