"""Parameter containers, layers and the named-tensor checkpoint format."""
from __future__ import annotations

import copy
import struct

import numpy as np

from .autodiff import ShapeError, Tensor, gru_step

MAGIC = b"DAVETNS1"


class Module:
    """Base class; parameters are discovered from attributes, recursively."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def clone(self):
        return copy.deepcopy(self)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, bound, shape):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = _uniform(rng, bound, (in_dim, out_dim))
        self.bias = _uniform(rng, bound, (out_dim,))

    def forward(self, x):
        return x @ self.weight + self.bias


class GRUCell(Module):
    GATES = ("r", "z", "n")

    def __init__(self, in_dim, hidden_dim, rng):
        bound = 1.0 / np.sqrt(hidden_dim)
        self.hidden_dim = hidden_dim
        for g in self.GATES:
            setattr(self, f"w_i{g}", _uniform(rng, bound, (in_dim, hidden_dim)))
            setattr(self, f"w_h{g}", _uniform(rng, bound, (hidden_dim, hidden_dim)))
            setattr(self, f"b_i{g}", _uniform(rng, bound, (hidden_dim,)))
            setattr(self, f"b_h{g}", _uniform(rng, bound, (hidden_dim,)))

    def params(self):
        return {name: p for name, p in self.named_parameters()}

    def forward(self, x, h):
        return gru_step(x, h, self.params())


def save_tensors(path, named):
    """Write ``{name: array}`` to ``path`` in the container format.

    Layout (all integers little-endian):
    ``b"DAVETNS1"``, ``u32`` entry count, then per entry:
    ``u16`` name byte length, UTF-8 name, ``u8`` ndim, ``ndim * u32`` dims,
    ``prod(dims)`` little-endian float64 values in C order.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a tensor container (bad magic)")
    pos = 8
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes after {count} entries")
    return out
