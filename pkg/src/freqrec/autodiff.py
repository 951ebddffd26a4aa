"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

The graph is built eagerly: each operation returns a Tensor holding its
value, its parent Tensors, and a VJP closure mapping the output cotangent to
per-parent cotangents. backward() topologically sorts the graph once and
accumulates gradients leaf-ward. Everything runs in double precision, which
is what makes the 1e-4 finite-difference tolerances meaningful.

Broadcasting follows numpy's rules; gradients are summed back over broadcast
axes by _unbroadcast.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NumericalError(RuntimeError):
    """A gradient or update became non-finite."""

    def __init__(self, tensor_name: str, context: str = "gradient"):
        super().__init__(f"non-finite {context} in tensor {tensor_name!r}")
        self.tensor_name = tensor_name


class Tensor:
    __slots__ = ("data", "grad", "parents", "vjp", "name")

    def __init__(self, data, parents=(), vjp=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Convenience arithmetic; constants are wrapped as parentless Tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def leaf(data, name: str) -> Tensor:
    """A named parameter tensor."""
    return Tensor(data, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a cotangent down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar root into every reachable Tensor."""
    if root.data.shape != ():
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in topo:
        node.grad = None
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        contributions = node.vjp(node.grad)
        for parent, contrib in zip(node.parents, contributions):
            if contrib is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += contrib


# --- primitives ---


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def vjp(dout):
        return _unbroadcast(dout, a.data.shape), _unbroadcast(dout, b.data.shape)

    return Tensor(out, (a, b), vjp)


def add_const(t: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    return Tensor(t.data + c, (t,), lambda dout: (_unbroadcast(dout, t.data.shape),))


def neg(t: Tensor) -> Tensor:
    return Tensor(-t.data, (t,), lambda dout: (-dout,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def vjp(dout):
        return (
            _unbroadcast(dout * b.data, a.data.shape),
            _unbroadcast(dout * a.data, b.data.shape),
        )

    return Tensor(out, (a, b), vjp)


def mul_const(t: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)

    def vjp(dout):
        return (_unbroadcast(dout * c, t.data.shape),)

    return Tensor(t.data * c, (t,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D; reshape first")
    out = a.data @ b.data

    def vjp(dout):
        da = dout @ np.swapaxes(b.data, -1, -2)
        db = np.swapaxes(a.data, -1, -2) @ dout
        return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)

    return Tensor(out, (a, b), vjp)


def transpose(t: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def vjp(dout):
        return (dout.transpose(inverse),)

    return Tensor(t.data.transpose(axes), (t,), vjp)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = t.data.shape
    return Tensor(t.data.reshape(shape), (t,), lambda dout: (dout.reshape(orig),))


def take_rows(t: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather (embedding lookup); scatter-add on the way back."""
    idx = np.asarray(idx)
    out = t.data[idx]

    def vjp(dout):
        g = np.zeros_like(t.data)
        np.add.at(g, idx, dout)
        return (g,)

    return Tensor(out, (t,), vjp)


def take_at(t: Tensor, index: tuple[np.ndarray, ...]) -> Tensor:
    """Advanced indexing with integer arrays (readout, diagonal, target pick)."""
    out = t.data[index]

    def vjp(dout):
        g = np.zeros_like(t.data)
        np.add.at(g, index, dout)
        return (g,)

    return Tensor(out, (t,), vjp)


def sum_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def vjp(dout):
        if axis is None:
            return (np.broadcast_to(dout, t.data.shape),)
        g = dout
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.data.shape),)

    return Tensor(out, (t,), vjp)


def mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = t.data.size if axis is None else t.data.shape[axis]
    return mul_const(sum_(t, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(t: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-shifted for stability.

    Masked positions should carry -inf in the input; they come out exactly 0
    and receive exactly zero gradient.
    """
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(dout):
        inner = (dout * p).sum(axis=-1, keepdims=True)
        return (p * (dout - inner),)

    return Tensor(p, (t,), vjp)


def log_softmax(t: Tensor) -> Tensor:
    m = t.data.max(axis=-1, keepdims=True)
    shifted = t.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def vjp(dout):
        return (dout - p * dout.sum(axis=-1, keepdims=True),)

    return Tensor(out, (t,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learnable scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def vjp(dout):
        lead = tuple(range(dout.ndim - 1))
        dgain = (dout * xhat).sum(axis=lead)
        dbias = dout.sum(axis=lead)
        dxhat = dout * gain.data
        # standard layer-norm backward: remove the mean and the xhat-projected
        # component of the cotangent, then rescale
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return Tensor(out, (x, gain, bias), vjp)


def gelu(t: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit: x * Phi(x)."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = x * cdf

    def vjp(dout):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (dout * (cdf + x * pdf),)

    return Tensor(out, (t,), vjp)


def power(t: Tensor, p: float) -> Tensor:
    out = t.data ** p

    def vjp(dout):
        return (dout * p * t.data ** (p - 1.0),)

    return Tensor(out, (t,), vjp)


def exp_(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return Tensor(out, (t,), lambda dout: (dout * out,))


def log_(t: Tensor) -> Tensor:
    return Tensor(np.log(t.data), (t,), lambda dout: (dout / t.data,))


def dropout(t: Tensor, rate: float, gen: np.random.Generator) -> Tensor:
    """Inverted dropout; rate 0 returns the input tensor unchanged, so a
    rate-0 train pass is bit-identical to an eval pass."""
    if rate == 0.0:
        return t
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    mask = (gen.random(t.data.shape) >= rate) / (1.0 - rate)
    return Tensor(t.data * mask, (t,), lambda dout: (dout * mask,))


def check_finite_gradients(tensors: dict[str, Tensor]) -> None:
    for name, t in tensors.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise NumericalError(name)
