"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op builds a node that remembers its parents and a closure mapping the
upstream gradient to one gradient per parent.  ``backward`` walks the graph in
reverse topological order and accumulates into the ``grad`` slot of leaf
tensors that have ``requires_grad`` set.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, ContractError, DimensionError

PROB_FLOOR = 1e-12
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _node(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.name = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor._node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor._node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor._node(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, c):
    c = float(c)
    return Tensor._node(a.data * c, (a,), lambda g: (g * c,))


def sum(a):  # noqa: A001 - mirrors numpy naming
    return Tensor._node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a, axis=None):
    if axis is None:
        n = a.data.size
        return Tensor._node(np.asarray(a.data.mean()), (a,),
                            lambda g: (np.full(a.shape, float(g) / n),))
    n = a.shape[axis]
    out = a.data.mean(axis=axis)
    return Tensor._node(out, (a,),
                        lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),))


def affine(x, W, bias):
    """``x @ W + bias`` for ``x`` of shape (b, d_in)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(f"affine expects 2-D x, 2-D W, 1-D bias; got {x.shape}, {W.shape}, {bias.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != bias.shape[0]:
        raise DimensionError(f"affine shape mismatch: x{x.shape} W{W.shape} bias{bias.shape}")
    out = x.data @ W.data + bias.data

    def backward(g):
        return g @ W.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor._node(out, (x, W, bias), backward)


def _gelu(v):
    return 0.5 * v * (1.0 + erf(v / _SQRT2))


def _gelu_grad(v):
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    return cdf + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)


ACTIVATIONS = ("relu", "gelu", "tanh", "identity")


def activation(x, kind):
    if kind == "relu":
        mask = x.data > 0
        return Tensor._node(x.data * mask, (x,), lambda g: (g * mask,))
    if kind == "gelu":
        return Tensor._node(_gelu(x.data), (x,), lambda g: (g * _gelu_grad(x.data),))
    if kind == "tanh":
        out = np.tanh(x.data)
        return Tensor._node(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "identity":
        return x
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax(logits):
    z = logits.data
    if z.ndim == 0 or z.shape[-1] < 1:
        raise DimensionError("softmax needs a last axis of length >= 1")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._node(s, (logits,), backward)


def cross_entropy(probs, labels):
    """Mean negative log-probability of the labelled class."""
    p = probs.data
    if p.ndim != 2:
        raise DimensionError(f"cross_entropy expects (b, U) probabilities, got {probs.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, U = p.shape
    if labels.shape[0] != b:
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= U):
        raise IndexError(f"label out of range [0, {U})")
    rows = np.arange(b)
    picked = p[rows, labels]
    clipped = np.maximum(picked, PROB_FLOOR)
    out = np.asarray(-np.log(clipped).mean())

    def backward(g):
        grad = np.zeros_like(p)
        grad[rows, labels] = np.where(picked > PROB_FLOOR, -1.0 / (b * clipped), 0.0)
        return (grad * g,)

    return Tensor._node(out, (probs,), backward)


def kl_divergence(p, q):
    """KL(p || q) along the last axis; leading axes are kept."""
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence shape mismatch {p.shape} vs {q.shape}")
    pf = np.maximum(p.data, PROB_FLOOR)
    qf = np.maximum(q.data, PROB_FLOOR)
    log_ratio = np.log(pf) - np.log(qf)
    out = (p.data * log_ratio).sum(axis=-1)

    def backward(g):
        g = np.expand_dims(g, -1)
        dp = log_ratio + (p.data > PROB_FLOOR)
        dq = np.where(q.data > PROB_FLOOR, -p.data / qf, 0.0)
        return g * dp, g * dq

    return Tensor._node(np.asarray(out), (p, q), backward)


def entropy(p):
    """Shannon entropy along the last axis (natural log)."""
    pf = np.maximum(p.data, PROB_FLOOR)
    logp = np.log(pf)
    out = -(p.data * logp).sum(axis=-1)

    def backward(g):
        return (-np.expand_dims(g, -1) * (logp + (p.data > PROB_FLOOR)),)

    return Tensor._node(np.asarray(out), (p,), backward)


def concat(tensors):
    """Column-wise concatenation of (b, d_i) tensors, in order."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    b = tensors[0].shape[0]
    if any(t.data.ndim != 2 or t.shape[0] != b for t in tensors):
        raise DimensionError(f"concat batch mismatch: {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._node(out, tensors, backward)


def stack(tensors):
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack shape mismatch: {sorted(shapes)}")
    out = np.stack([t.data for t in tensors])
    return Tensor._node(out, tensors, lambda g: tuple(g[i] for i in range(len(tensors))))


def weighted_sum(weights, tensors):
    """sum_k weights[k] * tensors[k] for a 1-D weight vector."""
    tensors = list(tensors)
    if weights.data.ndim != 1 or weights.shape[0] != len(tensors):
        raise DimensionError(f"{weights.shape} weights for {len(tensors)} tensors")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"weighted_sum shape mismatch: {sorted(shapes)}")
    w = weights.data
    out = np.zeros(tensors[0].shape)
    for wk, t in zip(w, tensors):
        out += wk * t.data

    def backward(g):
        dw = np.array([(g * t.data).sum() for t in tensors])
        return (dw,) + tuple(wk * g for wk in w)

    return Tensor._node(out, (weights, *tensors), backward)


def _toposort(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss, wrt=None):
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf.

    Tensors listed in ``wrt`` that the loss does not depend on receive a zero
    gradient, so callers can rely on every trainable entry having a grad.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
    for t in wrt or ():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


class ParamSet:
    """Ordered name -> (tensor, trainable) registry."""

    def __init__(self, entries=None):
        self._entries = OrderedDict()
        for name, (tensor, trainable) in (entries or {}).items():
            self.add(name, tensor, trainable)

    def add(self, name, tensor, trainable=True):
        if name in self._entries:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._entries[name] = (tensor, bool(trainable))

    def __len__(self):
        return len(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name):
        return self._entries[name][0]

    def items(self):
        return [(n, t) for n, (t, _) in self._entries.items()]

    def entries(self):
        return list(self._entries.items())

    def trainable(self):
        return [(n, t) for n, (t, tr) in self._entries.items() if tr]

    def zero_grad(self):
        for t, _ in self._entries.values():
            t.grad = None


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One bias-corrected Adam update of the trainable entries, then clear grads."""
    trainable = params.trainable()
    for name, tensor in trainable:
        if tensor.grad is None:
            raise ContractError(f"trainable parameter {name!r} has no gradient")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, tensor in trainable:
        g = tensor.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        tensor.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.zero_grad()
    return params
