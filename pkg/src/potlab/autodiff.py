"""Array-valued reverse-mode automatic differentiation.

A ``Tape`` records every operation as a node holding its value, parent
indices and a vector-Jacobian product.  Node order is insertion order, which
is a topological order by construction.  A tape supports exactly one
``backward`` call.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError, ValueError):
    """A NaN or infinity reached a place that requires finite values."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Var:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape._needs[self.index]

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.lift(other)))

    def __rsub__(self, other):
        return add(self.tape.lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return vmean(self, axis)

    @property
    def T(self):
        return transpose(self)


class Tape:
    def __init__(self):
        self._values: list = []
        self._parents: list = []
        self._vjps: list = []
        self._needs: list = []
        self._params: dict = {}
        self._consumed = False
        self.min_relu_margin = np.inf

    def __len__(self):
        return len(self._values)

    def _push(self, value, parents=(), vjp=None, needs=False) -> Var:
        if self._consumed:
            raise TapeError("tape already consumed by backward; record a new forward pass")
        idx = len(self._values)
        self._values.append(value)
        self._parents.append(tuple(parents))
        self._vjps.append(vjp if needs else None)
        self._needs.append(needs)
        return Var(self, idx, value)

    def constant(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite input recorded on tape")
        return self._push(value)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("variable belongs to a different tape")
            return x
        return self.constant(x)

    def param(self, pv) -> Var:
        """Leaf for a ``ParamVector``; repeated calls return the same node."""
        key = id(pv)
        if key not in self._params:
            var = self._push(np.array(pv.values, dtype=np.float64), needs=True)
            self._params[key] = (pv, var)
        return self._params[key][1]

    def record(self, value, parents: Sequence[Var], vjp: Callable) -> Var:
        needs = any(self._needs[p.index] for p in parents)
        return self._push(value, [p.index for p in parents], vjp, needs)

    def backward(self, loss: Var) -> "Gradients":
        if self._consumed:
            raise TapeError("backward already called on this tape")
        if loss.tape is not self:
            raise TapeError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")
        self._consumed = True
        grads: list = [None] * len(self._values)
        grads[loss.index] = np.ones_like(self._values[loss.index])
        for idx in range(loss.index, -1, -1):
            g = grads[idx]
            vjp = self._vjps[idx]
            if g is None or vjp is None:
                continue
            parents = self._parents[idx]
            pgrads = vjp(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not self._needs[p]:
                    continue
                grads[p] = pg if grads[p] is None else grads[p] + pg
        out = {}
        for key, (pv, var) in self._params.items():
            g = grads[var.index]
            out[key] = np.zeros_like(pv.values) if g is None else g
        # free intermediate buffers; the tape cannot be reused anyway
        self._values = []
        self._vjps = []
        return Gradients(out)


class Gradients:
    """Flat gradients keyed by parameter vector."""

    def __init__(self, by_id: dict):
        self._by_id = by_id

    def __getitem__(self, pv) -> np.ndarray:
        try:
            return self._by_id[id(pv)]
        except KeyError:
            return np.zeros_like(pv.values)

    def __contains__(self, pv) -> bool:
        return id(pv) in self._by_id


# --- primitive ops -----------------------------------------------------------


def _pair(a, b):
    if isinstance(a, Var):
        return a, a.tape.lift(b)
    return b.tape.lift(a), b


def add(a, b) -> Var:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return a.tape.record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Var) -> Var:
    return a.tape.record(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    return a.tape.record(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def power(a: Var, p: float) -> Var:
    av = a.value
    return a.tape.record(av**p, (a,), lambda g: (g * p * av ** (p - 1),))


def square(a: Var) -> Var:
    av = a.value
    return a.tape.record(av * av, (a,), lambda g: (2.0 * g * av,))


def matmul(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    return a.tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return a.tape.record(a.value.T, (a,), lambda g: (g.T,))


def getitem(a: Var, idx) -> Var:
    av = a.value
    fancy = _needs_add_at(idx)

    def vjp(g):
        out = np.zeros_like(av)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return a.tape.record(av[idx], (a,), vjp)


def _needs_add_at(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence, axis: int = -1) -> Var:
    tape = next(p.tape for p in parts if isinstance(p, Var))
    vs = [tape.lift(p) for p in parts]
    sizes = [v.shape[axis] for v in vs]
    splits = np.cumsum(sizes)[:-1]
    return tape.record(
        np.concatenate([v.value for v in vs], axis=axis), vs, lambda g: tuple(np.split(g, splits, axis=axis))
    )


def vsum(a: Var, axis=None) -> Var:
    av = a.value

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return a.tape.record(np.asarray(av.sum(axis=axis)), (a,), vjp)


def vmean(a: Var, axis=None) -> Var:
    av = a.value
    count = av.size if axis is None else av.shape[axis]

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, av.shape).copy(),)

    return a.tape.record(np.asarray(av.mean(axis=axis)), (a,), vjp)


def relu(a: Var) -> Var:
    av = a.value
    if av.size:
        a.tape.min_relu_margin = min(a.tape.min_relu_margin, float(np.min(np.abs(av))))
    mask = av > 0
    return a.tape.record(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return a.tape.record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Var) -> Var:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape.record(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    return a.tape.record(np.log(av), (a,), lambda g: (g / av,))


def clip(a: Var, lo: float, hi: float) -> Var:
    av = a.value
    mask = (av >= lo) & (av <= hi)
    return a.tape.record(np.clip(av, lo, hi), (a,), lambda g: (g * mask,))


def row_sq_norm(a: Var) -> Var:
    """``sum_k a[:, k]**2`` per row."""
    av = a.value
    return a.tape.record(np.einsum("ij,ij->i", av, av), (a,), lambda g: (2.0 * g[:, None] * av,))


def row_norm(a: Var) -> Var:
    """Euclidean norm per row; subgradient 0 at the origin."""
    av = a.value
    nrm = np.sqrt(np.einsum("ij,ij->i", av, av))
    safe = np.where(nrm > 0, nrm, 1.0)

    def vjp(g):
        return (np.where(nrm[:, None] > 0, g[:, None] * av / safe[:, None], 0.0),)

    return a.tape.record(nrm, (a,), vjp)


def detach(a: Var) -> Var:
    return a.tape.constant(a.value)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def scalar(x) -> float:
    return float(np.asarray(value_of(x)).reshape(()))


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                     indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of ``f`` at ``x`` (optionally only at ``indices``)."""
    x = np.array(x, dtype=np.float64)
    idx = np.arange(x.size) if indices is None else np.asarray(indices)
    out = np.zeros(idx.size)
    flat = x.reshape(-1)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out
