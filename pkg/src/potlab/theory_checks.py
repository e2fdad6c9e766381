"""Numerical verifiers for the transport identities and bounds of the POT setting.

Each verifier returns a ``CheckReport``.  Equality checks pass when
``|lhs - rhs| <= tolerance``; bound checks when ``lhs <= rhs + tolerance``.
Some checks carry extra certificate conditions in ``details["conditions"]``;
those must all hold as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .exact_ot import cost_matrix, dual_potentials, pairwise_cost, solve_primal
from .measures import DiscreteMeasure, make_discrete, make_rng, pushforward
from .nn import MlpNet

LP_TOL = 1e-9

Map = Callable[[np.ndarray], np.ndarray]


@dataclass
class CheckReport:
    name: str
    lhs: float
    rhs: float
    abs_gap: float
    tolerance: float
    passed: bool
    kind: str = "equality"
    details: dict = field(default_factory=dict)

    @classmethod
    def build(cls, name: str, lhs: float, rhs: float, tolerance: float, kind: str = "equality",
              details: Optional[dict] = None) -> "CheckReport":
        details = dict(details or {})
        lhs, rhs, tolerance = float(lhs), float(rhs), float(tolerance)
        gap = abs(lhs - rhs)
        ok = gap <= tolerance if kind == "equality" else lhs <= rhs + tolerance
        ok = bool(ok and all(details.get("conditions", {}).values()))
        return cls(name, lhs, rhs, gap, tolerance, ok, kind, details)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "CheckReport":
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CheckReport":
        return cls.from_dict(json.loads(text))


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def _image(p_z: DiscreteMeasure, g: Map) -> DiscreteMeasure:
    return pushforward(p_z, g)


def _merged(mu: DiscreteMeasure) -> DiscreteMeasure:
    pts, inv = np.unique(mu.points, axis=0, return_inverse=True)
    w = np.zeros(pts.shape[0])
    np.add.at(w, inv.ravel(), mu.weights)
    return make_discrete(pts, w)


def composed_cost(p_x: DiscreteMeasure, p_z: DiscreteMeasure, g: Map, cost: str) -> np.ndarray:
    """``C'[i, j] = c(x_i, g(z_j))``, evaluating ``g`` one latent atom at a time."""
    imgs = np.vstack([np.atleast_2d(np.asarray(g(p_z.points[j:j + 1]), dtype=np.float64))
                      for j in range(p_z.n)])
    if not np.all(np.isfinite(imgs)):
        raise ValueError("map is non-finite on the latent support")
    return pairwise_cost(p_x.points, imgs, cost)


# --- verifiers -------------------------------------------------------------------


def verify_theorem1(p_x: DiscreteMeasure, p_z: DiscreteMeasure, g: Map, cost: str = "sq_euclidean") -> CheckReport:
    """Transport to the pushforward equals transport to the latent law under ``c(x, g(z))``.

    ``details["lhs_merged"]`` repeats the left side with coincident images
    merged, which must agree too.
    """
    p_g = _image(p_z, g)
    lhs = solve_primal(p_x, p_g, cost_matrix(p_x, p_g, cost)).value
    rhs = solve_primal(p_x, p_z, composed_cost(p_x, p_z, g, cost)).value
    merged = _merged(p_g)
    lhs_m = solve_primal(p_x, merged, cost_matrix(p_x, merged, cost)).value
    return CheckReport.build("theorem1", lhs, rhs, LP_TOL, details={
        "cost": cost, "n": p_x.n, "m": p_z.n, "lhs_merged": lhs_m,
        "conditions": {"merged_agrees": abs(lhs_m - rhs) <= LP_TOL},
    })


def plan_to_conditional(gamma: np.ndarray, p_x) -> np.ndarray:
    """Row-normalize a plan into ``q(z | x)``; massless rows become uniform."""
    w = p_x.weights if isinstance(p_x, DiscreteMeasure) else np.asarray(p_x)
    q = np.array(gamma, dtype=np.float64)
    rows = q.sum(axis=1)
    ok = w > 0
    q[ok] = q[ok] / rows[ok, None]
    q[~ok] = 1.0 / q.shape[1]
    return q


def verify_factorization(p_x: DiscreteMeasure, p_z: DiscreteMeasure, g: Map, q: np.ndarray,
                         cost: str = "sq_euclidean") -> CheckReport:
    """Couplings built from a conditional ``q`` with ``Q_Z = P_Z`` cost at least the optimum."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (p_x.n, p_z.n):
        raise ValueError(f"conditional has shape {q.shape}, expected {(p_x.n, p_z.n)}")
    if np.any(q < -LP_TOL) or np.max(np.abs(q.sum(axis=1) - 1.0)) > LP_TOL:
        raise ValueError("rows of q must be probability vectors")
    agg = p_x.weights @ q
    viol = float(np.max(np.abs(agg - p_z.weights)))
    if viol > LP_TOL:
        raise ValueError(f"aggregated posterior misses the prior by {viol:.3e} (> 1e-9)")
    gamma = q * p_x.weights[:, None]
    p_g = _image(p_z, g)
    row_err = float(np.max(np.abs(gamma.sum(axis=1) - p_x.weights)))
    col_err = float(np.max(np.abs(gamma.sum(axis=0) - p_g.weights)))
    C = cost_matrix(p_x, p_g, cost)
    coupled = float(np.sum(gamma * C))
    opt = solve_primal(p_x, p_g, C).value
    return CheckReport.build("factorization", opt, coupled, LP_TOL, kind="bound", details={
        "cost": cost, "row_marginal_error": row_err, "col_marginal_error": col_err,
        "aggregation_error": viol,
        "conditions": {"row_marginal": row_err <= LP_TOL, "col_marginal": col_err <= LP_TOL},
    })


def _resample(mu: DiscreteMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.choice(mu.n, size=n, p=mu.weights)
    return mu.points[idx]


def verify_corollary1(p_x: DiscreteMeasure, p_z: DiscreteMeasure, g: Map, sigma2: float, n_samples: int,
                      rng: np.random.Generator, n_seeds: int = 10) -> CheckReport:
    """Gaussian-decoder transport stays below ``d sigma2`` plus the Dirac-decoder optimum.

    The left side is a seed-averaged exact OT estimate between equal-size
    samples; tolerance = three standard errors plus 5% of the right side.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    if n_samples < 64:
        raise ValueError("n_samples must be at least 64")
    d = p_x.d
    rhs = d * sigma2 + solve_primal(p_x, p_z, composed_cost(p_x, p_z, g, "sq_euclidean")).value
    sigma = math.sqrt(sigma2)
    w = 1.0 / n_samples
    ests = []
    for _ in range(n_seeds):
        z = _resample(p_z, n_samples, rng)
        y = np.asarray(g(z), dtype=np.float64).reshape(n_samples, d) + sigma * rng.standard_normal((n_samples, d))
        x = _resample(p_x, n_samples, rng)
        C = pairwise_cost(x, y, "sq_euclidean")
        ests.append(solve_primal(np.full(n_samples, w), np.full(n_samples, w), C).value)
    ests = np.array(ests)
    se = float(ests.std(ddof=1) / math.sqrt(n_seeds)) if n_seeds > 1 else 0.0
    tol = 3.0 * se + 0.05 * rhs
    return CheckReport.build("corollary1", float(ests.mean()), rhs, tol, kind="bound", details={
        "sigma2": sigma2, "d": d, "n_samples": n_samples, "n_seeds": n_seeds,
        "std_error": se, "estimates": ests.tolist(),
    })


def verify_lemma2(g: Map, n: int, sigma2: float, rng: np.random.Generator) -> CheckReport:
    """Output variance of a 1-D Gaussian decoder is ``sigma2 + Var[g(Z)]``, ``Z ~ N(0, 1)``."""
    if n < 10_000:
        raise ValueError("verify_lemma2 needs n >= 10^4 samples")
    if not sigma2 >= 0:
        raise ValueError("sigma2 must be >= 0")
    z = rng.standard_normal((n, 1))
    gz = np.asarray(g(z), dtype=np.float64).reshape(-1)
    if gz.size != n:
        raise ValueError("verify_lemma2 needs a map with 1-D output")
    y = gz + math.sqrt(sigma2) * rng.standard_normal(n)
    lhs = float(np.var(y, ddof=1))
    rhs = sigma2 + float(np.var(gz, ddof=1))
    tol = 3.0 * math.sqrt(2.0 / (n - 1)) * lhs
    return CheckReport.build("lemma2", lhs, rhs, tol, details={"n": n, "sigma2": sigma2})


def duality_gap_check(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: str = "euclidean") -> CheckReport:
    """Primal optimum against the dual value of the extracted potentials."""
    C = cost_matrix(mu, nu, cost)
    plan = solve_primal(mu, nu, C)
    pot = dual_potentials(plan, C, mu, nu, cost)
    conditions = {
        "feasible": pot.max_infeasibility <= LP_TOL,
        "slackness": pot.max_slackness <= LP_TOL,
    }
    lip = None
    if cost == "euclidean":
        dx = pairwise_cost(mu.points, mu.points, "euclidean")
        lip = float(max(0.0, np.max(np.abs(pot.f[:, None] - pot.f[None, :]) - dx)))
        conditions["source_lipschitz"] = lip <= LP_TOL
    return CheckReport.build("duality", plan.value, pot.value, LP_TOL, details={
        "cost": cost, "max_infeasibility": pot.max_infeasibility, "max_slackness": pot.max_slackness,
        "source_lipschitz_violation": lip, "conditions": conditions,
    })


# --- random instances ------------------------------------------------------------------


def random_measure(rng: np.random.Generator, n: int, d: int, uniform: bool = False) -> DiscreteMeasure:
    pts = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0)
    w = np.full(n, 1.0 / n) if uniform else rng.dirichlet(np.ones(n))
    return make_discrete(pts, w)


def random_map(rng: np.random.Generator, d_in: int, d_out: int, hidden: int = 8) -> Map:
    """Random two-layer tanh net as a plain array map."""
    net = MlpNet.init([d_in, hidden, d_out], ["tanh", "linear"], rng)
    net.params.values[:] += 0.1 * rng.standard_normal(net.params.size)
    return net.predict


def theorem1_instance(rng: np.random.Generator):
    n, m = int(rng.integers(1, 65)), int(rng.integers(1, 65))
    d_x, d_z = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    cost = ("sq_euclidean", "euclidean")[int(rng.integers(0, 2))]
    p_x = random_measure(rng, n, d_x, uniform=bool(rng.integers(0, 2)))
    p_z = random_measure(rng, m, d_z, uniform=bool(rng.integers(0, 2)))
    return p_x, p_z, random_map(rng, d_z, d_x), cost


def run_theorem1(seed: int):
    return verify_theorem1(*theorem1_instance(make_rng(seed, 101)))


def run_factorization(seed: int):
    rng = make_rng(seed, 102)
    p_x, p_z, g, cost = theorem1_instance(rng)
    plan = solve_primal(p_x, p_z, composed_cost(p_x, p_z, g, cost))
    return verify_factorization(p_x, p_z, g, plan_to_conditional(plan.gamma, p_x), cost)


def run_duality(seed: int):
    rng = make_rng(seed, 103)
    n, m = int(rng.integers(1, 33)), int(rng.integers(1, 33))
    cost = ("euclidean", "sq_euclidean")[seed % 2]
    return duality_gap_check(random_measure(rng, n, 2), random_measure(rng, m, 2), cost)


def run_lemma2(seed: int, n: int = 100_000):
    rng = make_rng(seed, 104)
    g = random_map(rng, 1, 1)
    return verify_lemma2(g, n, float(rng.uniform(0.0, 2.0)), rng)


def corollary1_instance(rng: np.random.Generator):
    n, m = int(rng.integers(4, 17)), int(rng.integers(4, 17))
    d = int(rng.integers(1, 3))
    p_x = random_measure(rng, n, d)
    p_z = random_measure(rng, m, 2)
    return p_x, p_z, random_map(rng, 2, d), float(rng.uniform(0.05, 0.5))


def run_corollary1(seed: int, n_samples: int = 128):
    rng = make_rng(seed, 105)
    p_x, p_z, g, s2 = corollary1_instance(rng)
    return verify_corollary1(p_x, p_z, g, s2, n_samples, rng)


SUITES = {
    "theorem1": run_theorem1,
    "factorization": run_factorization,
    "duality": run_duality,
    "lemma2": run_lemma2,
    "corollary1": run_corollary1,
}


def run_suite(name: str, seeds: int, base_seed: int = 0):
    if name not in SUITES:
        raise ValueError(f"unknown check {name!r}; valid: {sorted(SUITES)}")
    return [SUITES[name](base_seed + s) for s in range(seeds)]
