"""Finitely supported probability measures, toy samplers and pushforwards."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np


def make_rng(seed: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator for ``(seed, stream)``.

    Distinct ``stream`` values give independent sequences for one seed, so
    an experiment can hand each component its own generator.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=np.float64).ravel()
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a measure needs at least one support point")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValueError("support points must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def to_dict(self) -> dict:
        return {"d": self.d, "points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteMeasure":
        m = make_discrete(doc["points"], doc["weights"])
        if "d" in doc and int(doc["d"]) != m.d:
            raise ValueError(f"declared d={doc['d']} but points have d={m.d}")
        return m

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        return cls.from_dict(json.loads(text))


def make_discrete(points, weights) -> DiscreteMeasure:
    """Build a measure, renormalizing ``weights`` to sum to one.

    Points may be a flat list (1-D support) or a list of equal-length vectors.
    """
    if isinstance(points, np.ndarray):
        pts = points.astype(np.float64)
    else:
        rows = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in points]
        if not rows:
            raise ValueError("a measure needs at least one support point")
        if len({r.shape for r in rows}) != 1:
            raise ValueError("all support points must have the same dimension")
        pts = np.stack(rows)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=np.float64).ravel()
    if pts.shape[0] == 0 or w.size == 0:
        raise ValueError("a measure needs at least one support point")
    if w.shape[0] != pts.shape[0]:
        raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("weights must have positive finite total mass")
    w = w / total
    # division leaves the sum within a few ulps of 1; a visible residue goes
    # into the largest atom so that the 1e-12 invariant always holds
    if abs(w.sum() - 1.0) > 1e-13:
        w[np.argmax(w)] += 1.0 - w.sum()
    return DiscreteMeasure(pts, w)


def uniform(points) -> DiscreteMeasure:
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    return make_discrete(pts, np.full(n, 1.0 / n))


def dirac(point) -> DiscreteMeasure:
    return make_discrete([point], [1.0])


# --- toy datasets -----------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mean: tuple = (0.0,)
    var: tuple = (1.0,)

    def __post_init__(self):
        mean = tuple(float(v) for v in np.atleast_1d(self.mean))
        var = tuple(float(v) for v in np.atleast_1d(self.var))
        if len(var) == 1 and len(mean) > 1:
            var = var * len(mean)
        if len(mean) != len(var):
            raise ValueError("mean and cov-diag lengths differ")
        if not all(math.isfinite(v) for v in mean + var) or any(v < 0 for v in var):
            raise ValueError("gaussian parameters must be finite with var >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.mean) + np.sqrt(self.var) * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class Ring8:
    """Equal mixture of 8 isotropic Gaussians evenly spaced on a circle."""

    radius: float = 2.0
    std: float = 0.05

    def __post_init__(self):
        if not (math.isfinite(self.radius) and math.isfinite(self.std) and self.std >= 0):
            raise ValueError("ring8 needs finite radius and std >= 0")

    dim = 2

    def centers(self) -> np.ndarray:
        ang = 2 * np.pi * np.arange(8) / 8
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        modes = rng.integers(0, 8, size=n)
        return self.centers()[modes] + self.std * rng.standard_normal((n, 2))


@dataclass(frozen=True)
class SwissRoll2D:
    noise: float = 0.05
    scale: float = 0.2

    def __post_init__(self):
        if not (math.isfinite(self.noise) and math.isfinite(self.scale) and self.noise >= 0):
            raise ValueError("swissroll2d needs finite noise >= 0 and finite scale")

    dim = 2

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        t = 1.5 * np.pi * (1 + 2 * rng.random(n))
        xy = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) * self.scale
        return xy + self.noise * rng.standard_normal((n, 2))


@dataclass(frozen=True)
class TwoPoints:
    """``x1`` with probability ``p``, otherwise ``x0``."""

    x0: tuple = (0.0,)
    x1: tuple = (1.0,)
    p: float = 0.5

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        x1 = tuple(float(v) for v in np.atleast_1d(self.x1))
        if len(x0) != len(x1):
            raise ValueError("two_points atoms have different dimensions")
        if not all(math.isfinite(v) for v in x0 + x1) or not 0.0 <= self.p <= 1.0:
            raise ValueError("two_points needs finite atoms and p in [0, 1]")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)

    @property
    def dim(self) -> int:
        return len(self.x0)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pick = rng.random(n) < self.p
        return np.where(pick[:, None], np.asarray(self.x1), np.asarray(self.x0))


ToyDataset = Union[Gaussian, Ring8, SwissRoll2D, TwoPoints]

_KINDS = {"gaussian": Gaussian, "ring8": Ring8, "swissroll2d": SwissRoll2D, "two_points": TwoPoints}


def dataset_from_dict(doc: dict) -> ToyDataset:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; valid: {sorted(_KINDS)}")
    return _KINDS[kind](**doc)


def dataset_to_dict(kind: ToyDataset) -> dict:
    name = {v: k for k, v in _KINDS.items()}[type(kind)]
    out = {"kind": name}
    for f in kind.__dataclass_fields__:
        val = getattr(kind, f)
        out[f] = list(val) if isinstance(val, tuple) else val
    return out


def sample_toy(kind: ToyDataset, n: int, rng: np.random.Generator) -> DiscreteMeasure:
    """Uniform-weight empirical measure of ``n`` i.i.d. draws."""
    if n < 1:
        raise ValueError("sample size must be at least 1")
    pts = kind.draw(int(n), rng)
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def pushforward(mu: DiscreteMeasure, g: Callable[[np.ndarray], np.ndarray]) -> DiscreteMeasure:
    """Image measure of ``mu`` under ``g``; coincident images stay separate atoms.

    ``g`` is applied to the ``(n, d)`` array of support points at once.
    """
    img = np.asarray(g(mu.points), dtype=np.float64)
    if img.ndim == 1:
        img = img[:, None]
    if img.shape[0] != mu.n:
        raise ValueError(f"map returned {img.shape[0]} images for {mu.n} points")
    if not np.all(np.isfinite(img)):
        raise ValueError("map is non-finite on the support")
    return DiscreteMeasure(img, mu.weights)
