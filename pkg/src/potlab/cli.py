"""``potlab`` command line: solve, check, experiment, train, evaluate, sweep.

Exit codes: 0 success, 1 a check or verification failed, 2 usage error.
Data goes to stdout or files; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import theory_checks as tc
from .exact_ot import cost_matrix, dual_potentials, solve_primal
from .io_utils import atomic_write_text, fmt12, write_csv, write_json
from .measures import DiscreteMeasure, make_discrete, make_rng
from .trainer import ConfigError, TrainConfig, evaluate, latest_checkpoint, load_checkpoint, train

EXPERIMENTS = ("prop1", "blurriness", "fragility")


class UsageError(Exception):
    pass


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _load_measure(path) -> DiscreteMeasure:
    try:
        return DiscreteMeasure.from_dict(_load_json(path))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: invalid measure ({exc})") from exc


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _load_config(args) -> TrainConfig:
    doc = _load_json(args.config) if args.config else {}
    try:
        cfg = TrainConfig.from_dict(doc)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.lam is not None:
            over["lam"] = args.lam
        if args.sigma2 is not None:
            over["sigma2"] = args.sigma2
        if args.cost is not None:
            over["cost"] = args.cost
        return cfg.replace(**over) if over else cfg
    except (ConfigError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


# --- commands ------------------------------------------------------------------------------


def cmd_solve(args) -> int:
    mu, nu = _load_measure(args.mu), _load_measure(args.nu)
    if mu.d != nu.d:
        raise UsageError(f"measures have dimensions {mu.d} and {nu.d}")
    cost = args.cost or "sq_euclidean"
    C = cost_matrix(mu, nu, cost)
    plan = solve_primal(mu, nu, C)
    _emit({"w_value": float(fmt12(plan.value))})
    if args.out:
        pot = dual_potentials(plan, C, mu, nu, cost)
        write_json(args.out, {"cost": cost, "plan": plan.to_dict(), "dual": pot.to_dict()})
    return 0


def cmd_check(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    base = 0 if args.seed is None else args.seed
    reports = tc.run_suite(args.name, args.seeds, base)
    text = tc.reports_to_json(reports) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    failed = [r for r in reports if not r.passed]
    print(f"{args.name}: {len(reports) - len(failed)}/{len(reports)} passed", file=sys.stderr)
    return 1 if failed else 0


def _experiment_prop1(args, out: Path) -> int:
    sigmas = [args.sigma2] if args.sigma2 is not None else [0.25, 0.5, 0.75]
    seed = 0 if args.seed is None else args.seed
    try:
        results = [ex.prop1_gaussian(s, n_mc=args.n_mc, rng=make_rng(seed, 7)) for s in sigmas]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ex.write_prop1(out, results)
    _emit([r.summary() for r in results])
    ok = all(abs(r.c_star - np.sqrt(1 - r.sigma2)) <= 0.02 and abs(r.c_dagger - 1.0) <= 0.02 for r in results)
    return 0 if ok else 1


def _experiment_blurriness(args, out: Path) -> int:
    if args.config:
        doc = _load_json(args.config)
        try:
            atoms = make_discrete(doc["points"], doc["weights"])
            q = np.asarray(doc["q"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"blurriness config needs points, weights and q ({exc})") from exc
    else:
        atoms = make_discrete([[0.0], [1.0], [3.0]], [0.5, 0.25, 0.25])
        q = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    try:
        res = ex.blurriness_demo(atoms, q)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ex.write_blurriness(out, res)
    _emit(res.table())
    return 0


def _experiment_fragility(args, out: Path) -> int:
    geometry = _load_json(args.config) if args.config else None
    eps_values = [args.epsilon] if args.epsilon is not None else [0.0, 0.005, 0.01, 0.02, 0.05]
    try:
        results = [ex.dual_fragility(geometry, e) for e in eps_values]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid geometry: {exc}") from exc
    ex.write_fragility(out, results)
    _emit([r.summary() for r in results])
    ok = all(r.suboptimality <= r.epsilon + 1e-12 and r.lipschitz_violation <= 1e-6 for r in results)
    return 0 if ok else 1


def cmd_experiment(args) -> int:
    out = Path(args.out or f"experiment_{args.name}")
    return {"prop1": _experiment_prop1, "blurriness": _experiment_blurriness,
            "fragility": _experiment_fragility}[args.name](args, out)


def cmd_train(args) -> int:
    if not args.out:
        raise UsageError("train needs --out")
    cfg = _load_config(args)
    res = train(cfg, args.out)
    last = res.metrics[-1]
    _emit({"step": last.step, "recon": last.recon, "penalty": last.penalty, "total": last.total,
           "w_eval": last.w_eval, "w_eval_initial": res.metrics[0].w_eval})
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    if not (args.checkpoint or args.run):
        raise UsageError("evaluate needs --checkpoint or --run")
    try:
        prefix = Path(args.checkpoint) if args.checkpoint else latest_checkpoint(args.run)
        nets = load_checkpoint(prefix)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    seed = cfg.seed if args.seed is None else args.seed
    try:
        row = evaluate(nets, cfg.dataset, args.n_eval or cfg.n_eval, make_rng(seed, 9), cfg.cost)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit({"checkpoint": str(prefix), "recon": row.recon, "w_eval": float(fmt12(row.w_eval))})
    return 0


def _parse_values(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise UsageError("--values is empty")
    return vals


def cmd_sweep(args) -> int:
    if not args.out:
        raise UsageError("sweep needs --out")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    base = _load_config(args)
    values = _parse_values(args.values)
    key = "lam" if args.param == "lambda" else "sigma2"
    configs = []
    for v in values:
        over = {key: v}
        if args.tie and args.param == "sigma2":
            over["lam"] = 2.0 * v
        try:
            configs.append(base.replace(**over))
        except ConfigError as exc:
            raise UsageError(f"{args.param}={v}: {exc}") from exc
    out = Path(args.out)
    dirs = [out / f"{args.param}={fmt12(v)}" for v in values]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(train, configs, dirs))
    rows = []
    for v, cfg, res in zip(values, configs, results):
        last = res.metrics[-1]
        rows.append([float(v), float(cfg.lam), float(cfg.sigma2), last.recon, last.penalty, last.total,
                     res.metrics[0].w_eval, last.w_eval])
    header = [args.param, "lambda_used", "sigma2_used", "recon", "penalty", "total", "w_eval_initial", "w_eval"]
    write_csv(out / "summary.csv", header, rows)
    _emit({"summary": str(out / "summary.csv"), "points": len(rows)})
    return 0


# --- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="potlab", description="exact OT, penalized-OT training and numerical checks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
        sp.add_argument("--out", default=None)
        sp.add_argument("--cost", choices=("euclidean", "sq_euclidean"), default=None)
        if config:
            sp.add_argument("--config", default=None)
            sp.add_argument("--lambda", dest="lam", type=float, default=None)
            sp.add_argument("--sigma2", type=float, default=None)

    s = sub.add_parser("solve", help="exact OT between two measure files")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    common(s, config=False)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("check", help="run a randomized verification suite")
    s.add_argument("name", choices=sorted(tc.SUITES))
    s.add_argument("--seeds", type=int, default=10)
    common(s, config=False)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("experiment", help="run an analytic case study")
    s.add_argument("name", choices=EXPERIMENTS)
    s.add_argument("--n-mc", type=int, default=10_000)
    s.add_argument("--epsilon", type=float, default=None)
    common(s)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("train", help="train from a config file")
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint with exact OT")
    s.add_argument("--checkpoint", default=None, help="path prefix <dir>/ckpt_<step>")
    s.add_argument("--run", default=None, help="run directory; uses its latest checkpoint")
    s.add_argument("--n-eval", type=int, default=None)
    common(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="train over a grid of lambda or sigma2 values")
    s.add_argument("--param", choices=("lambda", "sigma2"), required=True)
    s.add_argument("--values", required=True, help="comma-separated grid")
    s.add_argument("--tie", action="store_true", help="with --param sigma2, set lambda = 2 sigma2")
    s.add_argument("--workers", type=int, default=2)
    common(s)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"potlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
