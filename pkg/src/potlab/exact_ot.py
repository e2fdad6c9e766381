"""Exact optimal transport between discrete measures.

The primal solver is a network simplex on the transportation polytope
(``_simplex.network_simplex``).  ``assignment_oracle`` is an independent
Hungarian solver used to cross-check it on uniform equal-size instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._simplex import INFEASIBLE, MAX_ITER, network_simplex
from .measures import DiscreteMeasure

COST_KINDS = ("sq_euclidean", "euclidean")
CostKind = Union[str, np.ndarray]

WEIGHT_FLOOR = 1e-15


class NonOptimalPlanError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransportPlan:
    gamma: np.ndarray
    value: float
    basis: Optional[np.ndarray] = field(default=None, repr=False)
    pivots: int = 0
    _f: Optional[np.ndarray] = field(default=None, repr=False)
    _g: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "value": self.value}


@dataclass(frozen=True, eq=False)
class DualPotentials:
    f: np.ndarray
    g: np.ndarray
    value: float
    max_infeasibility: float
    max_slackness: float
    lipschitz_violation: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "f": self.f.tolist(),
            "g": self.g.tolist(),
            "value": self.value,
            "max_infeasibility": self.max_infeasibility,
            "max_slackness": self.max_slackness,
            "lipschitz_violation": self.lipschitz_violation,
        }


def pairwise_cost(x: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {kind!r}; valid: {COST_KINDS}")
    diff = x[:, None, :] - y[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return sq if kind == "sq_euclidean" else np.sqrt(sq)


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, kind: CostKind) -> np.ndarray:
    """``C[i, j] = c(x_i, y_j)`` for a named cost, or a validated custom matrix."""
    if isinstance(kind, str):
        return pairwise_cost(mu.points, nu.points, kind)
    C = np.asarray(kind, dtype=np.float64)
    if C.shape != (mu.n, nu.n):
        raise ValueError(f"custom cost has shape {C.shape}, expected {(mu.n, nu.n)}")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("custom cost entries must be finite and non-negative")
    return C


def _weights(m) -> np.ndarray:
    w = m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=np.float64)
    w = np.where(w < WEIGHT_FLOOR, 0.0, w)
    total = w.sum()
    if total <= 0:
        raise ValueError("measure has no mass above the weight floor")
    return w / total


def solve_primal(mu, nu, C, max_iter: int = 50_000_000) -> TransportPlan:
    """Exact optimal vertex plan for the transportation LP.

    ``mu`` and ``nu`` are measures or weight vectors matching ``C``'s shape.
    """
    a = _weights(mu)
    b = _weights(nu)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match marginals {(a.size, b.size)}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    status, gamma, u, v, basic, pivots = network_simplex(a, b, C, max_iter)
    if status == MAX_ITER:
        raise RuntimeError(f"network simplex hit the pivot limit ({max_iter})")
    assert status != INFEASIBLE, "balanced transportation problem reported infeasible"
    value = float(np.sum(gamma * C))
    return TransportPlan(gamma=gamma, value=value, basis=basic, pivots=int(pivots), _f=u, _g=v)


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, kind: CostKind = "sq_euclidean") -> float:
    return solve_primal(mu, nu, cost_matrix(mu, nu, kind)).value


def _c_transform_pair(C: np.ndarray, f: np.ndarray):
    g = np.min(C - f[:, None], axis=0)
    f = np.min(C - g[None, :], axis=1)
    return f, g


def dual_potentials(plan: TransportPlan, C, mu, nu, cost: Optional[CostKind] = None) -> DualPotentials:
    """Optimal potentials ``(f, g)`` certifying ``plan``.

    Potentials are tightened by a double c-transform, so each ``f_i`` equals
    ``min_j (C_ij - g_j)`` and vice versa.  For the ``euclidean`` cost the
    witness ``phi = f`` on sources, ``-g`` on targets is then 1-Lipschitz on
    the union of supports; its worst violation is reported.

    Raises ``NonOptimalPlanError`` when the duality gap exceeds 1e-6.
    """
    C = np.asarray(C, dtype=np.float64)
    a = _weights(mu)
    b = _weights(nu)
    if plan._f is not None and plan._f.shape == (a.size,) and plan._g.shape == (b.size,):
        f0 = plan._f
    else:
        f0 = solve_primal(a, b, C)._f
    f, g = _c_transform_pair(C, f0)
    shift = f[0]
    f = f - shift
    g = g + shift
    value = float(f @ a + g @ b)
    gap = abs(value - plan.value)
    if gap > 1e-6:
        raise NonOptimalPlanError(f"duality gap {gap:.3e} exceeds 1e-6; plan is not optimal")
    slack = C - f[:, None] - g[None, :]
    infeas = float(max(0.0, -slack.min()))
    pos = plan.gamma > 0
    cs = float(np.abs(slack[pos]).max()) if pos.any() else 0.0
    lip = None
    if isinstance(cost, str) and cost == "euclidean" and isinstance(mu, DiscreteMeasure):
        pts = np.vstack([mu.points, nu.points])
        phi = np.concatenate([f, -g])
        lip = lipschitz_violation(pts, phi)
    return DualPotentials(f=f, g=g, value=value, max_infeasibility=infeas, max_slackness=cs, lipschitz_violation=lip)


def lipschitz_violation(points: np.ndarray, values: np.ndarray) -> float:
    """``max(0, max_{a,b} |phi_a - phi_b| - ||p_a - p_b||)`` over all pairs."""
    d = pairwise_cost(points, points, "euclidean")
    dv = np.abs(values[:, None] - values[None, :])
    return float(max(0.0, np.max(dv - d)))


# --- independent oracles -----------------------------------------------------


def hungarian(C: np.ndarray):
    """Minimum-cost perfect assignment of a square matrix.

    Shortest augmenting path with row/column potentials, O(n^3).  Returns
    ``(cols, total)`` with ``cols[i]`` the column assigned to row ``i``.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n or n == 0:
        raise ValueError("hungarian needs a non-empty square matrix")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j] = row (1-based) holding column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.int64)
    cols[owner[1:] - 1] = np.arange(n)
    return cols, float(C[np.arange(n), cols].sum())


def assignment_oracle(mu: DiscreteMeasure, nu: DiscreteMeasure, C) -> float:
    """``(1/n) min_pi sum_i C[i, pi(i)]`` for uniform n-point measures."""
    if mu.n != nu.n:
        raise ValueError(f"assignment oracle needs n == m, got {mu.n} and {nu.n}")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise ValueError("assignment oracle needs uniform weights on both sides")
    _, total = hungarian(np.asarray(C, dtype=np.float64))
    return total / mu.n


def brute_force_assignment(C) -> float:
    """Mean cost of the best permutation by exhaustive enumeration (n <= 8)."""
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if n > 9:
        raise ValueError("exhaustive enumeration is limited to n <= 9")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    totals = C[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min() / n)


def quantile_coupling_cost(x: np.ndarray, y: np.ndarray) -> float:
    """Exact 1-D squared W2 between equal-size uniform samples (sorted matching)."""
    x = np.sort(np.ravel(x))
    y = np.sort(np.ravel(y))
    if x.size != y.size:
        raise ValueError("sorted coupling needs equal sample sizes")
    return float(np.mean((x - y) ** 2))
