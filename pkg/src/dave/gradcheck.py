"""Central finite-difference checks for the autodiff graph."""
from __future__ import annotations

import numpy as np

from .autodiff import no_grad


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def numerical_gradient(f, tensors, eps=1e-5):
    """Coordinate-wise central differences of scalar ``f()`` w.r.t. each tensor's data."""
    grads = []
    with no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                hi = float(f().data)
                flat[i] = old - eps
                lo = float(f().data)
                flat[i] = old
                gflat[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def analytic_gradient(f, tensors):
    for t in tensors:
        t.grad = None
    f().backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(f, tensors, eps=1e-5):
    """Largest relative error between backprop and finite differences over ``tensors``."""
    num = numerical_gradient(f, tensors, eps)
    ana = analytic_gradient(f, tensors)
    return relative_error(np.concatenate([a.ravel() for a in ana]), np.concatenate([n.ravel() for n in num]))


def check_directional(f, tensors, rng, eps=1e-5):
    """Relative error of ``grad . v`` against a central difference along random ``v``."""
    ana = analytic_gradient(f, tensors)
    dirs = [rng.standard_normal(t.shape) for t in tensors]
    predicted = sum(float((g * v).sum()) for g, v in zip(ana, dirs))
    saved = [t.data.copy() for t in tensors]
    with no_grad():
        for t, v, s in zip(tensors, dirs, saved):
            t.data = s + eps * v
        hi = float(f().data)
        for t, v, s in zip(tensors, dirs, saved):
            t.data = s - eps * v
        lo = float(f().data)
    for t, s in zip(tensors, saved):
        t.data = s
    return relative_error(predicted, (hi - lo) / (2 * eps))
