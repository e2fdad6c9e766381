"""Analytic case studies: Gaussian minimizers, decoder averaging and dual-gradient fragility."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .exact_ot import cost_matrix, dual_potentials, pairwise_cost, solve_primal
from .io_utils import write_csv, write_json
from .measures import DiscreteMeasure, uniform

# --- Gaussian minimizers -----------------------------------------------------------


@dataclass
class Prop1Result:
    sigma2: float
    c_dagger: float
    c_star: float
    c_grid: np.ndarray
    w_dagger: np.ndarray
    w_c: np.ndarray
    n_mc: int
    sampling: str

    def summary(self) -> dict:
        return {
            "sigma2": self.sigma2, "c_dagger": self.c_dagger, "c_star": self.c_star,
            "c_star_theory": math.sqrt(1.0 - self.sigma2), "n_mc": self.n_mc,
            "grid": [float(self.c_grid[0]), float(self.c_grid[-1]), int(self.c_grid.size)],
            "sampling": self.sampling,
        }


def normal_sample(n: int, rng: np.random.Generator, sampling: str = "stratified") -> np.ndarray:
    """Sorted N(0, 1) sample; ``stratified`` draws one point per quantile cell."""
    if sampling == "stratified":
        u = (np.arange(n) + rng.uniform(size=n)) / n
        return ndtri(u)
    if sampling == "iid":
        return np.sort(rng.standard_normal(n))
    raise ValueError(f"unknown sampling {sampling!r}; valid: ('stratified', 'iid')")


def default_c_grid() -> np.ndarray:
    return np.round(np.arange(0.5, 1.5 + 1e-12, 0.0025), 10)


def prop1_gaussian(sigma2: float, c_grid: Optional[Sequence[float]] = None, n_mc: int = 10_000,
                   rng: Optional[np.random.Generator] = None, sampling: str = "stratified") -> Prop1Result:
    """Grid argmins of the Dirac-decoder bound and the true cost for linear ``G(z) = c z``.

    Data and latent are standard normal.  The bound is
    ``sigma2 + W2^2(N(0,1), N(0,c^2))`` and the true cost is
    ``W2^2(N(0,1), N(0, c^2 + sigma2))``, both from sorted samples (the
    optimal 1-D coupling).
    """
    if not 0.0 < sigma2 < 1.0:
        raise ValueError("sigma2 must lie in (0, 1)")
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    grid = default_c_grid() if c_grid is None else np.asarray(c_grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("c grid must be non-empty and positive")
    x = normal_sample(n_mc, rng, sampling)
    w = normal_sample(n_mc, rng, sampling)
    # sum((x - s w)^2) / n expanded once; sorted order is preserved for s > 0
    xx, xw, ww = float(x @ x) / n_mc, float(x @ w) / n_mc, float(w @ w) / n_mc

    def w2(scale):
        return xx - 2.0 * scale * xw + scale * scale * ww

    w_dagger = sigma2 + w2(grid)
    w_c = w2(np.sqrt(grid * grid + sigma2))
    return Prop1Result(sigma2=float(sigma2), c_dagger=float(grid[np.argmin(w_dagger)]),
                       c_star=float(grid[np.argmin(w_c)]), c_grid=grid, w_dagger=w_dagger, w_c=w_c,
                       n_mc=int(n_mc), sampling=sampling)


def prop1_direct_curve(sigma2: float, c_grid, n_mc: int, rng: np.random.Generator, z=None) -> np.ndarray:
    """True-cost curve from explicit model draws ``c z + sigma eps`` (cross-check)."""
    x = np.sort(rng.standard_normal(n_mc))
    z = rng.standard_normal(n_mc) if z is None else z
    eps = rng.standard_normal(n_mc)
    s = math.sqrt(sigma2)
    return np.array([np.mean((x - np.sort(c * z + s * eps)) ** 2) for c in c_grid])


def write_prop1(out_dir, results: Sequence[Prop1Result]) -> None:
    out_dir = Path(out_dir)
    rows = []
    for r in results:
        rows += [(r.sigma2, float(c), float(a), float(b)) for c, a, b in zip(r.c_grid, r.w_dagger, r.w_c)]
    write_csv(out_dir / "prop1_curves.csv", ["sigma2", "c", "w_dagger", "w_c"], rows)
    write_json(out_dir / "prop1_summary.json", [r.summary() for r in results])


# --- decoder averaging ----------------------------------------------------------------


@dataclass
class BlurrinessResult:
    g_star: np.ndarray  # (K, d)
    mass: np.ndarray  # (K,)
    posterior: np.ndarray  # (n, K), columns sum to 1
    blurry: np.ndarray  # (K,) bool

    def table(self) -> list:
        return [{"z": j, "g_star": self.g_star[j].tolist(), "mass": float(self.mass[j]),
                 "contributors": int(np.sum(self.posterior[:, j] > 0.01)), "blurry": bool(self.blurry[j])}
                for j in range(self.g_star.shape[0])]


def blurriness_demo(x_atoms: DiscreteMeasure, q: np.ndarray, threshold: float = 0.01) -> BlurrinessResult:
    """Squared-loss optimal decoder ``G*(z)``: the posterior mean of ``x`` given ``z``.

    ``q[i, z]`` is the encoder probability of code ``z`` for atom ``i``.  A
    code is blurry when at least two atoms each carry more than
    ``threshold`` of its posterior mass.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] != x_atoms.n:
        raise ValueError(f"conditional has shape {q.shape}, expected ({x_atoms.n}, K)")
    if np.any(q < 0) or np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("rows of q must be probability vectors")
    joint = x_atoms.weights[:, None] * q
    mass = joint.sum(axis=0)
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise ValueError(f"latent atom(s) {empty.tolist()} receive zero mass")
    post = joint / mass
    g_star = post.T @ x_atoms.points
    # an atom with all the posterior mass reproduces itself exactly
    solo = post.max(axis=0) == 1.0
    g_star[solo] = x_atoms.points[np.argmax(post[:, solo], axis=0)]
    blurry = np.sum(post > threshold, axis=0) >= 2
    return BlurrinessResult(g_star=g_star, mass=mass, posterior=post, blurry=blurry)


def write_blurriness(out_dir, res: BlurrinessResult) -> None:
    out_dir = Path(out_dir)
    d = res.g_star.shape[1]
    header = ["z"] + [f"g{k}" for k in range(d)] + ["mass", "blurry"]
    rows = [[j] + [float(v) for v in res.g_star[j]] + [float(res.mass[j]), int(res.blurry[j])]
            for j in range(res.g_star.shape[0])]
    write_csv(out_dir / "blurriness_table.csv", header, rows)
    write_json(out_dir / "blurriness_summary.json", {"table": res.table(), "n_blurry": int(res.blurry.sum())})


# --- dual-gradient fragility --------------------------------------------------------------


@dataclass
class FragilityResult:
    epsilon: float
    suboptimality: float
    cosine: float
    j_star: float
    j_eps: float
    grad_star: np.ndarray
    grad_eps: np.ndarray
    lipschitz_violation: float
    witness: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon, "suboptimality": self.suboptimality, "cosine": self.cosine,
            "j_star": self.j_star, "j_eps": self.j_eps, "grad_star": self.grad_star.tolist(),
            "grad_eps": self.grad_eps.tolist(), "lipschitz_violation": self.lipschitz_violation,
            "witness": self.witness, "notes": list(self.notes),
        }


class Witness:
    """Upper McShane extension ``f(y) = min_k (phi_k + ||y - s_k||)``, optionally
    lowered by a dip cone ``min(f, c + ||y - b||)``.  Both pieces are 1-Lipschitz."""

    def __init__(self, supports: np.ndarray, values: np.ndarray, dip: Optional[tuple] = None):
        self.supports = np.asarray(supports, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        self.dip = dip

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        out = np.min(self.values[None, :] + pairwise_cost(y, self.supports, "euclidean"), axis=1)
        if self.dip is not None:
            b, c = self.dip
            out = np.minimum(out, c + np.linalg.norm(y - b, axis=1))
        return out

    def grad(self, y, h: float = 1e-6) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        e = np.eye(y.size) * h
        return (self(y + e) - self(y - e)) / (2.0 * h)

    def is_kink(self, y, tol: float) -> bool:
        """True when active cones at ``y`` disagree in gradient.

        A cone whose apex is ``y`` itself is ignored when another cone ties
        with it: by the triangle inequality it then lies above that cone.
        """
        y = np.asarray(y, dtype=np.float64)
        dist = np.linalg.norm(self.supports - y, axis=1)
        terms = self.values + dist
        active = terms - terms.min() < tol
        away = active & (dist > 1e-12)
        if not away.any():
            return True
        dirs = (y - self.supports[away]) / dist[away, None]
        return bool(np.max(np.abs(dirs - dirs[0])) > 1e-6)


def _objective(f: Witness, xs: np.ndarray, ys: np.ndarray) -> float:
    """``E_{P_G} f - E_{P_X} f`` for uniform two-point measures."""
    return float(np.mean(f(ys)) - np.mean(f(xs)))


def _grid_lipschitz(f: Witness, lo: np.ndarray, hi: np.ndarray, extra: np.ndarray, n: int) -> float:
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
    pts = np.vstack([np.column_stack([gx.ravel(), gy.ravel()]), extra])
    vals = f(pts)
    worst = 0.0
    for start in range(0, pts.shape[0], 512):
        blk = slice(start, start + 512)
        d = pairwise_cost(pts[blk], pts, "euclidean")
        worst = max(worst, float(np.max(np.abs(vals[blk, None] - vals[None, :]) - d)))
    return max(0.0, worst)


FIXTURE = {"x0": (0.0, 0.0), "x1": (4.0, 0.0), "y0": (1.0, 0.0), "y1": (3.0, 0.0)}


def dual_fragility(geometry: Optional[dict] = None, epsilon: float = 0.01, bump_center=None,
                   bump_depth: Optional[float] = None, tilt: float = 0.25, h: float = 1e-6,
                   grid_n: int = 41) -> FragilityResult:
    """Perturb an optimal W1 witness into an ``epsilon``-suboptimal 1-Lipschitz one
    whose gradient at ``y0`` points elsewhere.

    The witness is built from LP potentials (value ``g`` on the model atoms,
    ``-f`` on the data atoms) and maximizes ``E_{P_G} f - E_{P_X} f``.  The
    dip cone sits ``2 epsilon`` from ``y0``, perpendicular to the data-model
    axis and tilted by ``tilt`` along the unperturbed gradient; its depth at
    ``y0`` is ``epsilon / 2``.  With an explicit ``bump_center`` the depth
    ``bump_depth`` (default ``epsilon / 2``) is measured at the center.
    """
    geometry = dict(FIXTURE if geometry is None else geometry)
    if not epsilon >= 0:
        raise ValueError("epsilon must be >= 0")
    pts = {k: np.asarray(geometry[k], dtype=np.float64).reshape(2) for k in ("x0", "x1", "y0", "y1")}
    notes = []
    if np.linalg.norm(pts["y0"] - pts["y1"]) == 0:
        raise ValueError("y0 and y1 must differ")
    for k in ("x0", "x1"):
        if np.linalg.norm(pts["y0"] - pts[k]) < 1e-12:
            pts["y0"] = pts["y0"] + np.array([0.0, 1e-9])
            notes.append(f"y0 coincided with {k}; moved by 1e-9")
    xs = np.vstack([pts["x0"], pts["x1"]])
    ys = np.vstack([pts["y0"], pts["y1"]])
    mu, nu = uniform(xs), uniform(ys)
    C = cost_matrix(mu, nu, "euclidean")
    plan = solve_primal(mu, nu, C)
    pot = dual_potentials(plan, C, mu, nu, "euclidean")
    supports = np.vstack([xs, ys])
    values = np.concatenate([-pot.f, pot.g])
    f_star = Witness(supports, values)
    y0 = pts["y0"]
    if f_star.is_kink(y0, 10 * h):
        notes.append("y0 lies on a kink of the extension; finite differences straddle it")
    j_star = _objective(f_star, xs, ys)
    g_star = f_star.grad(y0, h)

    dip = None
    if epsilon > 0:
        if bump_center is None:
            axis = pts["y1"] - y0
            perp = np.array([-axis[1], axis[0]]) / np.linalg.norm(axis)
            u = g_star / max(np.linalg.norm(g_star), 1e-300)
            direction = perp + tilt * u
            b = y0 + 2.0 * epsilon * direction / np.linalg.norm(direction)
            c = float(f_star(y0)[0]) - 0.5 * epsilon - float(np.linalg.norm(y0 - b))
        else:
            b = np.asarray(bump_center, dtype=np.float64).reshape(2)
            depth = 0.5 * epsilon if bump_depth is None else float(bump_depth)
            c = float(f_star(b)[0]) - depth
        dip = (b, c)
    f_eps = Witness(supports, values, dip)
    j_eps = _objective(f_eps, xs, ys)
    g_eps = f_eps.grad(y0, h)
    n1, n2 = np.linalg.norm(g_star), np.linalg.norm(g_eps)
    if n1 < 1e-6 or n2 < 1e-6:
        raise FloatingPointError("witness gradient vanished at y0; cosine undefined")
    # generator directions are -grad; the sign cancels in the cosine
    cosine = float(np.clip(g_star @ g_eps / (n1 * n2), -1.0, 1.0))
    allpts = np.vstack([supports] + ([dip[0][None, :]] if dip else []))
    lo, hi = allpts.min(axis=0) - 1.0, allpts.max(axis=0) + 1.0
    extra = allpts
    if dip is not None:
        extra = np.vstack([allpts, dip[0] + 0.5 * (y0 - dip[0]), y0 + np.array([[h, 0], [0, h]])])
    lip = _grid_lipschitz(f_eps, lo, hi, extra, grid_n)
    witness = {
        "supports": supports.tolist(), "values": values.tolist(), "w1": plan.value,
        "dip_center": None if dip is None else dip[0].tolist(), "dip_offset": None if dip is None else dip[1],
    }
    return FragilityResult(epsilon=float(epsilon), suboptimality=j_star - j_eps, cosine=cosine, j_star=j_star,
                           j_eps=j_eps, grad_star=g_star, grad_eps=g_eps, lipschitz_violation=lip,
                           witness=witness, notes=notes)


def write_fragility(out_dir, results: Sequence[FragilityResult]) -> None:
    out_dir = Path(out_dir)
    rows = [(r.epsilon, r.suboptimality, r.cosine, r.lipschitz_violation) for r in results]
    write_csv(out_dir / "fragility_sweep.csv", ["epsilon", "suboptimality", "cosine", "lipschitz_violation"], rows)
    write_json(out_dir / "fragility_summary.json", [r.summary() for r in results])
