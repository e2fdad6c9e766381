"""Feed-forward networks, optimizers, checkpoints and a gradient checker."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Var
from .io_utils import atomic_write_bytes, atomic_write_text

ACTIVATIONS = ("relu", "tanh", "linear", "sigmoid")


class NonFiniteGradientError(FloatingPointError):
    pass


class ParamVector:
    """Flat f64 parameter storage with a ``(name, rows, cols, offset)`` table."""

    def __init__(self, shapes: Sequence[tuple], values: Optional[np.ndarray] = None):
        table = []
        offset = 0
        for name, rows, cols in shapes:
            table.append((name, int(rows), int(cols), offset))
            offset += int(rows) * int(cols)
        self.table = table
        self.size = offset
        if values is None:
            values = np.zeros(offset)
        values = np.array(values, dtype=np.float64).ravel()
        if values.size != offset:
            raise ValueError(f"expected {offset} parameters, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameters must be finite")
        self.values = values

    def view(self, k: int) -> np.ndarray:
        _, r, c, off = self.table[k]
        return self.values[off:off + r * c].reshape(r, c)

    def copy(self) -> "ParamVector":
        return ParamVector([(n, r, c) for n, r, c, _ in self.table], self.values.copy())

    def __len__(self):
        return self.size


class MlpNet:
    """Dense network; layer ``l`` computes ``act_l(h @ W_l + b_l)``."""

    def __init__(self, widths: Sequence[int], activations: Sequence[str], params: Optional[ParamVector] = None):
        widths = [int(w) for w in widths]
        activations = list(activations)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError("need at least input and output widths, all >= 1")
        if len(activations) != len(widths) - 1:
            raise ValueError(f"{len(widths) - 1} layers but {len(activations)} activations")
        bad = [a for a in activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}; valid: {ACTIVATIONS}")
        self.widths = widths
        self.activations = activations
        shapes = []
        for l in range(len(widths) - 1):
            shapes.append((f"W{l}", widths[l], widths[l + 1]))
            shapes.append((f"b{l}", 1, widths[l + 1]))
        if params is None:
            params = ParamVector(shapes)
        elif [t[:3] for t in params.table] != shapes:
            raise ValueError("parameter table does not match the layer widths")
        self.params = params

    @classmethod
    def init(cls, widths, activations, rng: np.random.Generator) -> "MlpNet":
        """Uniform(-a, a) weights with ``a = sqrt(6 / (fan_in + fan_out))``; zero biases."""
        net = cls(widths, activations)
        for l in range(len(net.widths) - 1):
            fan_in, fan_out = net.widths[l], net.widths[l + 1]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            net.params.view(2 * l)[...] = rng.uniform(-a, a, size=(fan_in, fan_out))
        return net

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def __call__(self, tape: Tape, x) -> Var:
        return self.forward(tape, x)

    def forward(self, tape: Tape, x) -> Var:
        h = tape.lift(x)
        if h.value.ndim != 2 or h.value.shape[1] != self.in_dim:
            raise ValueError(f"input shape {h.value.shape} does not match width {self.in_dim}")
        if not np.all(np.isfinite(h.value)):
            raise NonFiniteError("non-finite network input")
        flat = tape.param(self.params)
        for l, act in enumerate(self.activations):
            W = self._slice(flat, 2 * l)
            b = self._slice(flat, 2 * l + 1)
            h = h @ W + b
            h = _apply(act, h)
        return h

    def _slice(self, flat: Var, k: int) -> Var:
        _, r, c, off = self.params.table[k]
        return ad.reshape(ad.getitem(flat, slice(off, off + r * c)), (r, c))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ValueError(f"input shape {h.shape} does not match width {self.in_dim}")
        for l, act in enumerate(self.activations):
            h = h @ self.params.view(2 * l) + self.params.view(2 * l + 1)
            if act == "relu":
                h = np.maximum(h, 0.0)
            elif act == "tanh":
                h = np.tanh(h)
            elif act == "sigmoid":
                h = 0.5 * (1.0 + np.tanh(0.5 * h))
        return h

    def clip_(self, bound: float) -> None:
        np.clip(self.params.values, -bound, bound, out=self.params.values)

    def spec(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations), "count": self.params.size}


def _apply(act: str, h: Var) -> Var:
    if act == "relu":
        return ad.relu(h)
    if act == "tanh":
        return ad.tanh(h)
    if act == "sigmoid":
        return ad.sigmoid(h)
    return h


# --- optimizers ---------------------------------------------------------------


def _check_grads(params: ParamVector, grads: np.ndarray) -> np.ndarray:
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape:
        raise ValueError(f"gradient length {grads.size} != parameter length {params.size}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("non-finite gradient; step aborted")
    return grads


class Sgd:
    def __init__(self, lr: float):
        if not lr >= 0:
            raise ValueError("learning rate must be >= 0")
        self.lr = float(lr)

    def step(self, params: ParamVector, grads) -> ParamVector:
        g = _check_grads(params, grads)
        params.values -= self.lr * g
        return params


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError("learning rate must be > 0")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = float(lr), float(beta1), float(beta2), float(eps)
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, params: ParamVector, grads) -> ParamVector:
        g = _check_grads(params, grads)
        if self.m is None:
            self.m = np.zeros_like(params.values)
            self.v = np.zeros_like(params.values)
        elif self.m.shape != g.shape:
            raise ValueError("optimizer state does not match parameter length")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params.values -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return params


def make_optimizer(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", "adam")
    if kind == "sgd":
        return Sgd(**spec)
    if kind == "adam":
        return Adam(**spec)
    raise ValueError(f"unknown optimizer {kind!r}; valid: ['adam', 'sgd']")


# --- checkpoints ----------------------------------------------------------------


def save_net(stem, net: MlpNet) -> None:
    """Write ``<stem>.bin`` (little-endian f64) and ``<stem>.json``."""
    stem = Path(stem)
    atomic_write_bytes(stem.with_name(stem.name + ".bin"), net.params.values.astype("<f8").tobytes())
    atomic_write_text(stem.with_name(stem.name + ".json"), json.dumps(net.spec()))


def load_net(stem) -> MlpNet:
    stem = Path(stem)
    spec = json.loads(stem.with_name(stem.name + ".json").read_text())
    values = np.frombuffer(stem.with_name(stem.name + ".bin").read_bytes(), dtype="<f8").astype(np.float64)
    if values.size != spec["count"]:
        raise ValueError(f"checkpoint holds {values.size} values, sidecar says {spec['count']}")
    net = MlpNet(spec["widths"], spec["activations"])
    if net.params.size != values.size:
        raise ValueError("checkpoint does not decode against its declared widths")
    net.params.values[:] = values
    return net


# --- gradient checking -----------------------------------------------------------


def grad_check(params: Sequence[ParamVector], loss_fn: Callable[[Tape, np.random.Generator], Var],
               rng: np.random.Generator, h: float = 1e-5, max_entries: Optional[int] = None,
               max_resample: int = 50) -> float:
    """Worst ``|ad - fd| / max(1, |ad|, |fd|)`` over parameters.

    ``loss_fn(tape, point_rng)`` builds a scalar loss; everything random in
    it must come from ``point_rng``, which is re-created identically for each
    evaluation.  If a relu pre-activation lies within ``10 h`` of its kink
    the evaluation point is redrawn.
    """
    for _ in range(max_resample):
        point_seed = int(rng.integers(0, 2**63 - 1))
        tape = Tape()
        loss = loss_fn(tape, np.random.default_rng(point_seed))
        if tape.min_relu_margin >= 10 * h:
            break
    else:
        raise RuntimeError("could not find a kink-free evaluation point")
    grads = tape.backward(loss)
    worst = 0.0
    for pv in params:
        ad_g = grads[pv]
        idx = np.arange(pv.size)
        if max_entries is not None and pv.size > max_entries:
            idx = np.sort(rng.choice(pv.size, size=max_entries, replace=False))

        def f(vals, pv=pv):
            saved = pv.values.copy()
            pv.values[:] = vals
            try:
                return ad.scalar(loss_fn(Tape(), np.random.default_rng(point_seed)))
            finally:
                pv.values[:] = saved

        fd = ad.numeric_gradient(f, pv.values.copy(), h, idx)
        a = ad_g[idx]
        err = np.abs(a - fd) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(fd)))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
