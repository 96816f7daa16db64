"""Reverse-mode automatic differentiation on numpy arrays.

Matrix-level primitives only (matmul, elementwise ops, reductions); this is
all the losses in this project need.  Everything is float64.

A computation is recorded implicitly as a DAG of :class:`Var` nodes; calling
:func:`backward` on a scalar loss accumulates gradients into every node
reachable from it.  Parameters live in a :class:`ParamStore`, which also owns
the Adam state and per-entry trainable flags.  Frozen entries simply never
appear in the gradient map, so the optimizer cannot touch them.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


class Var:
    """Node in the autodiff graph wrapping a float64 ndarray."""

    __slots__ = ("value", "parents", "vjps", "grad")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def _as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.shape),
            lambda g: _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a, b):
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.shape),
            lambda g: _unbroadcast(-g * a.value / b.value**2, b.shape),
        ),
    )


def matmul(a, b):
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim < 1 or b.value.ndim < 1:
        raise ShapeMismatch("matmul requires at least 1-D operands")
    out = a.value @ b.value

    def vjp_a(g):
        if b.value.ndim == 1:
            return np.outer(g, b.value) if a.value.ndim == 2 else g * b.value
        return np.atleast_2d(g) @ b.value.T if a.value.ndim == 2 else g @ b.value.T

    def vjp_b(g):
        if a.value.ndim == 1:
            return np.outer(a.value, g) if b.value.ndim == 2 else g * a.value
        return a.value.T @ np.atleast_2d(g) if b.value.ndim == 2 else a.value.T @ g

    return Var(out, (a, b), (vjp_a, vjp_b))


def tanh(a):
    a = _as_var(a)
    t = np.tanh(a.value)
    return Var(t, (a,), (lambda g: g * (1.0 - t * t),))


def exp(a):
    a = _as_var(a)
    e = np.exp(a.value)
    return Var(e, (a,), (lambda g: g * e,))


def log(a):
    a = _as_var(a)
    return Var(np.log(a.value), (a,), (lambda g: g / a.value,))


def square(a):
    a = _as_var(a)
    return Var(a.value**2, (a,), (lambda g: 2.0 * g * a.value,))


def softplus(a):
    """log(1 + exp(a)), numerically stable."""
    a = _as_var(a)
    out = np.maximum(a.value, 0.0) + np.log1p(np.exp(-np.abs(a.value)))
    sig = 1.0 / (1.0 + np.exp(-a.value))
    return Var(out, (a,), (lambda g: g * sig,))


def clip(a, lo, hi):
    """Clamp; gradient is zero outside [lo, hi] (straight mask)."""
    a = _as_var(a)
    mask = (a.value >= lo) & (a.value <= hi)
    return Var(np.clip(a.value, lo, hi), (a,), (lambda g: g * mask,))


def minimum(a, b):
    a, b = _as_var(a), _as_var(b)
    mask = a.value <= b.value
    return Var(
        np.minimum(a.value, b.value),
        (a, b),
        (
            lambda g: _unbroadcast(g * mask, a.shape),
            lambda g: _unbroadcast(g * ~mask, b.shape),
        ),
    )


def vsum(a, axis=None):
    a = _as_var(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

    return Var(a.value.sum(axis=axis), (a,), (vjp,))


def vmean(a, axis=None):
    a = _as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / n, a.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy()

    return Var(a.value.mean(axis=axis), (a,), (vjp,))


def take(a, idx):
    """Basic slicing/indexing with scatter-add vjp."""
    a = _as_var(a)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return out

    return Var(a.value[idx], (a,), (vjp,))


def concat(parts, axis=-1):
    parts = [_as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]

        return vjp

    return Var(
        np.concatenate([p.value for p in parts], axis=axis),
        tuple(parts),
        tuple(make_vjp(i) for i in range(len(parts))),
    )


def backward(loss):
    """Accumulate gradients of scalar `loss` into every reachable node.

    Returns nothing; read `node.grad` afterwards (see ParamStore.collect_grads).
    """
    if np.ndim(loss.value) != 0:
        raise ShapeMismatch("backward expects a scalar loss")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            g = vjp(node.grad)
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# Parameter storage and optimizer


class ParamStore:
    """Named float64 parameter tensors with trainable flags and Adam state."""

    def __init__(self):
        self._entries = {}

    def add(self, name, value, trainable=True):
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self._entries[name] = {
            "value": value,
            "trainable": bool(trainable),
            "m": np.zeros_like(value),
            "v": np.zeros_like(value),
            "step": 0,
        }

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name):
        return self._entries[name]["value"]

    def __setitem__(self, name, value):
        e = self._entries[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != e["value"].shape:
            raise ShapeMismatch(f"shape change for {name!r}")
        e["value"] = value.copy()

    def names(self):
        return list(self._entries)

    def entry(self, name):
        return self._entries[name]

    def is_trainable(self, name):
        return self._entries[name]["trainable"]

    def set_trainable(self, name, flag):
        self._entries[name]["trainable"] = bool(flag)

    def trainable_names(self):
        return [n for n, e in self._entries.items() if e["trainable"]]

    def make_vars(self):
        """One Var per entry; returns {name: Var} for use in a forward pass."""
        return {n: Var(e["value"]) for n, e in self._entries.items()}

    def collect_grads(self, var_map):
        """Gradient map for trainable entries only (frozen: no key)."""
        grads = {}
        for name, var in var_map.items():
            if name in self._entries and self._entries[name]["trainable"]:
                if var.grad is not None:
                    grads[name] = var.grad
        return grads

    def clone(self):
        out = ParamStore()
        for n, e in self._entries.items():
            out._entries[n] = {
                "value": e["value"].copy(),
                "trainable": e["trainable"],
                "m": e["m"].copy(),
                "v": e["v"].copy(),
                "step": e["step"],
            }
        return out

    def reset_optimizer(self):
        for e in self._entries.values():
            e["m"] = np.zeros_like(e["value"])
            e["v"] = np.zeros_like(e["value"])
            e["step"] = 0


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; frozen entries untouched."""
    for name, g in grads.items():
        e = store.entry(name)
        if not e["trainable"]:
            continue
        e["step"] += 1
        t = e["step"]
        e["m"] = beta1 * e["m"] + (1.0 - beta1) * g
        e["v"] = beta2 * e["v"] + (1.0 - beta2) * g * g
        m_hat = e["m"] / (1.0 - beta1**t)
        v_hat = e["v"] / (1.0 - beta2**t)
        e["value"] = e["value"] - lr * m_hat / (np.sqrt(v_hat) + eps)


def orthogonal(rng, shape, gain=1.0):
    """Orthogonal initialization (QR of a Gaussian matrix)."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]
