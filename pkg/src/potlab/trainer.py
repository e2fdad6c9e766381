"""Alternating training loop with exact-OT validation and checkpointing."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .exact_ot import pairwise_cost, solve_primal
from .io_utils import atomic_write_text, fmt12, write_csv, write_json
from .measures import dataset_from_dict, make_rng
from .nn import ACTIVATIONS, MlpNet, NonFiniteGradientError, load_net, make_optimizer, save_net
from .objectives import (AdversarialPenalty, Decoder, DeterministicEncoder, GaussianEncoder, ImplicitEncoder,
                         MomentMatchPenalty, gan_penalty, pot_objective, vae_objective, aae_objective,
                         wgan_objectives)

OBJECTIVES = ("pot", "aae", "vae", "wgan")
ENCODERS = ("deterministic", "gaussian_diag", "implicit", "none")
METRICS_HEADER = ["step", "recon", "penalty", "total", "w_eval", "ms"]

# rng streams per run
_INIT, _DATA, _PRIOR, _NOISE, _EVAL = 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    objective: str = "pot"
    dataset: dict = field(default_factory=lambda: {"kind": "ring8"})
    latent_dim: int = 2
    cost: str = "sq_euclidean"
    lam: float = 1.0
    sigma2: float = 0.0
    encoder: str = "deterministic"
    noise_dim: int = 2
    hidden: list = field(default_factory=lambda: [64, 64])
    disc_hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "relu"
    penalty: dict = field(default_factory=lambda: {"kind": "moment_match"})
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    disc_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    batch_size: int = 64
    steps: int = 20_000
    disc_steps: int = 1
    eval_every: int = 1000
    n_eval: int = 512
    seed: int = 0
    clip: float = 0.01
    checkpoint_every: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; valid: {OBJECTIVES}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}; valid: {ENCODERS}")
        if self.cost not in ("sq_euclidean", "euclidean"):
            raise ConfigError(f"unknown cost {self.cost!r}; valid: ('sq_euclidean', 'euclidean')")
        if not self.lam >= 0:
            raise ConfigError("lambda must be >= 0")
        if not self.sigma2 >= 0:
            raise ConfigError("sigma2 must be >= 0")
        if self.objective == "vae" and (self.encoder != "gaussian_diag" or not self.sigma2 > 0):
            raise ConfigError("vae needs a gaussian_diag encoder and sigma2 > 0")
        if self.objective == "aae" and not self.sigma2 > 0:
            raise ConfigError("aae needs sigma2 > 0")
        if self.objective == "aae" and self.penalty.get("kind") != "adversarial":
            raise ConfigError("aae needs an adversarial penalty")
        if self.objective == "wgan" and self.encoder != "none":
            raise ConfigError("wgan has no encoder; set encoder to 'none'")
        if self.objective != "wgan" and self.encoder == "none":
            raise ConfigError(f"{self.objective} needs an encoder")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; valid: {ACTIVATIONS}")
        if self.penalty.get("kind") not in ("moment_match", "adversarial"):
            raise ConfigError("penalty kind must be 'moment_match' or 'adversarial'")
        for name in ("latent_dim", "batch_size", "disc_steps", "eval_every", "n_eval"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.steps < 0 or self.seed < 0:
            raise ConfigError("steps and seed must be >= 0")
        if self.objective == "wgan" and not self.clip > 0:
            raise ConfigError("wgan clip bound must be > 0")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        try:
            dataset_from_dict(self.dataset)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid dataset: {exc}") from exc

    @property
    def adversarial(self) -> bool:
        return self.objective == "aae" or (self.objective == "pot" and self.penalty.get("kind") == "adversarial")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        valid = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - valid)
        if unknown:
            names = sorted((valid - {"lam"}) | {"lambda"})
            raise ConfigError(f"unknown config key(s) {unknown}; valid: {names}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class MetricsRow:
    step: int
    recon: float
    penalty: float
    total: float
    w_eval: float
    ms: float
    details: dict = field(default_factory=dict)

    def csv_row(self) -> list:
        return [self.step, fmt12(self.recon), fmt12(self.penalty), fmt12(self.total), fmt12(self.w_eval),
                fmt12(self.ms)]


@dataclass
class TrainResult:
    config: TrainConfig
    nets: dict
    metrics: list
    counters: dict


# --- model construction -------------------------------------------------------------


def build_nets(cfg: TrainConfig, rng: np.random.Generator) -> dict:
    d = dataset_from_dict(cfg.dataset).dim
    k = cfg.latent_dim
    hid = [int(h) for h in cfg.hidden]
    acts = [cfg.activation] * len(hid) + ["linear"]
    nets = {}
    if cfg.encoder == "deterministic":
        nets["encoder"] = MlpNet.init([d, *hid, k], acts, rng)
    elif cfg.encoder == "gaussian_diag":
        nets["encoder"] = MlpNet.init([d, *hid, 2 * k], acts, rng)
    elif cfg.encoder == "implicit":
        nets["encoder"] = MlpNet.init([d + cfg.noise_dim, *hid, k], acts, rng)
    nets["decoder"] = MlpNet.init([k, *hid, d], acts, rng)
    dh = [int(h) for h in cfg.disc_hidden]
    dacts = [cfg.activation] * len(dh) + ["linear"]
    if cfg.adversarial:
        nets["disc"] = MlpNet.init([k, *dh, 1], dacts, rng)
    if cfg.objective == "wgan":
        nets["critic"] = MlpNet.init([d, *dh, 1], dacts, rng)
        nets["critic"].clip_(cfg.clip)
    return nets


def make_encoder(cfg: TrainConfig, nets: dict):
    net = nets.get("encoder")
    if cfg.encoder == "deterministic":
        return DeterministicEncoder(net)
    if cfg.encoder == "gaussian_diag":
        return GaussianEncoder(net)
    if cfg.encoder == "implicit":
        return ImplicitEncoder(net, cfg.noise_dim)
    return None


def make_penalty(cfg: TrainConfig, nets: dict):
    spec = dict(cfg.penalty)
    kind = spec.pop("kind")
    if kind == "adversarial":
        return AdversarialPenalty(nets["disc"], cfg.disc_steps)
    return MomentMatchPenalty(**spec)


# --- evaluation -----------------------------------------------------------------------


def w_eval_distance(decoder: MlpNet, data: np.ndarray, z: np.ndarray, cost: str) -> float:
    """Exact OT between noiseless model samples ``G(z)`` and ``data`` (uniform weights)."""
    gen = decoder.predict(z)
    n, m = gen.shape[0], data.shape[0]
    return solve_primal(np.full(n, 1.0 / n), np.full(m, 1.0 / m), pairwise_cost(gen, data, cost)).value


def _objective_values(cfg: TrainConfig, nets: dict, x: np.ndarray, zp: np.ndarray, rng) -> tuple:
    if cfg.objective == "wgan":
        wl = wgan_objectives(x, zp, nets["decoder"], nets["critic"])
        return 0.0, -wl.critic_value, -wl.critic_value
    enc = make_encoder(cfg, nets)
    dec = Decoder(nets["decoder"], cfg.sigma2)
    if cfg.objective == "pot":
        v = pot_objective(x, enc, dec, make_penalty(cfg, nets), cfg.lam, zp, rng, cfg.cost)
    elif cfg.objective == "aae":
        v = aae_objective(x, enc, dec, nets["disc"], zp, rng)
    else:
        v = vae_objective(x, enc, dec, rng)
    return v.recon, v.penalty, v.total


def _eval_row(cfg: TrainConfig, nets: dict, step: int, rng: np.random.Generator, t0: float) -> MetricsRow:
    ds = dataset_from_dict(cfg.dataset)
    x = ds.draw(cfg.n_eval, rng)
    zp = rng.standard_normal((cfg.n_eval, cfg.latent_dim))
    recon, pen, total = _objective_values(cfg, nets, x, zp, rng)
    held_out = ds.draw(cfg.n_eval, rng)
    z = rng.standard_normal((cfg.n_eval, cfg.latent_dim))
    w = w_eval_distance(nets["decoder"], held_out, z, cfg.cost)
    return MetricsRow(step, recon, pen, total, w, (time.perf_counter() - t0) * 1000.0,
                      {"decoder_noise": False, "train_uses_sigma2": cfg.objective in ("aae", "vae")})


def evaluate(checkpoint, dataset, n_eval: int, rng: np.random.Generator, cost: str = "sq_euclidean",
             widths: Optional[dict] = None) -> MetricsRow:
    """Score a checkpoint against fresh data samples.

    ``checkpoint`` is a dict of nets or a path prefix ``<dir>/ckpt_<step>``.
    With an encoder present the row carries its reconstruction cost on the
    data; the penalty column is 0.  ``widths`` maps role to expected widths.
    """
    nets = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    if "decoder" not in nets:
        raise ValueError("checkpoint has no decoder")
    if widths:
        for role, w in widths.items():
            if role not in nets or list(nets[role].widths) != list(w):
                got = None if role not in nets else nets[role].widths
                raise ValueError(f"checkpoint {role} widths {got} do not match expected {list(w)}")
    ds = dataset_from_dict(dataset) if isinstance(dataset, dict) else dataset
    dec = nets["decoder"]
    if dec.out_dim != ds.dim:
        raise ValueError(f"decoder emits dim {dec.out_dim} but data has dim {ds.dim}")
    t0 = time.perf_counter()
    x = ds.draw(n_eval, rng)
    recon = 0.0
    enc = nets.get("encoder")
    if enc is not None and enc.in_dim == ds.dim and enc.out_dim == dec.in_dim:
        diff = dec.predict(enc.predict(x)) - x
        sq = np.einsum("ij,ij->i", diff, diff)
        recon = float(np.mean(sq if cost == "sq_euclidean" else np.sqrt(sq)))
    z = rng.standard_normal((n_eval, dec.in_dim))
    w = w_eval_distance(dec, ds.draw(n_eval, rng), z, cost)
    return MetricsRow(0, recon, 0.0, recon, w, (time.perf_counter() - t0) * 1000.0, {"decoder_noise": False})


# --- checkpoints -------------------------------------------------------------------------


def save_checkpoint(out_dir, step: int, nets: dict) -> Path:
    out_dir = Path(out_dir)
    for role, net in nets.items():
        save_net(out_dir / f"ckpt_{step}_{role}", net)
    return out_dir / f"ckpt_{step}"


def load_checkpoint(prefix) -> dict:
    prefix = Path(prefix)
    nets = {}
    for sidecar in sorted(prefix.parent.glob(prefix.name + "_*.json")):
        role = sidecar.name[len(prefix.name) + 1:-len(".json")]
        nets[role] = load_net(sidecar.with_suffix(""))
    if not nets:
        raise FileNotFoundError(f"no checkpoint files match {prefix}_*")
    return nets


def latest_checkpoint(run_dir) -> Path:
    steps = set()
    for p in Path(run_dir).glob("ckpt_*_*.json"):
        head = p.name.split("_")[1]
        if head.isdigit():
            steps.add(int(head))
    if not steps:
        raise FileNotFoundError(f"no checkpoints in {run_dir}")
    return Path(run_dir) / f"ckpt_{max(steps)}"


# --- training ------------------------------------------------------------------------------


def _snapshot(out_dir, step: int, nets: dict, reason: str, rows: list) -> None:
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    write_json(out_dir / "nan_snapshot.json", {
        "step": step, "reason": reason,
        "last_row": None if not rows else dataclasses.asdict(rows[-1]),
        "param_norms": {r: float(np.linalg.norm(n.params.values)) for r, n in nets.items()},
    })
    save_checkpoint(out_dir, step, {f"{r}_nan": n for r, n in nets.items()})


def train(config: TrainConfig, out_dir=None) -> TrainResult:
    """Run ``config.steps`` alternating updates; evaluate every ``eval_every`` steps.

    Every step draws one data and one prior batch, takes ``disc_steps``
    discriminator (or clipped critic) ascent steps when the objective needs
    them, and then one descent step on the encoder-decoder pair.  Identical
    configs produce identical metrics apart from the ``ms`` column.
    """
    cfg = config
    cfg.validate()
    t0 = time.perf_counter()
    ds = dataset_from_dict(cfg.dataset)
    nets = build_nets(cfg, make_rng(cfg.seed, _INIT))
    rng_data, rng_prior = make_rng(cfg.seed, _DATA), make_rng(cfg.seed, _PRIOR)
    rng_noise, rng_eval = make_rng(cfg.seed, _NOISE), make_rng(cfg.seed, _EVAL)
    gen_roles = [r for r in ("encoder", "decoder") if r in nets]
    opts = {r: make_optimizer(cfg.optimizer) for r in gen_roles}
    side = "disc" if "disc" in nets else ("critic" if "critic" in nets else None)
    if side:
        opts[side] = make_optimizer(cfg.disc_optimizer)
    counters = {"gen_updates": 0, "disc_updates": 0}
    skip_disc = cfg.objective == "pot" and cfg.lam == 0
    ckpt_every = cfg.checkpoint_every or 10 * cfg.eval_every
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out_dir / "config.echo.json", cfg.to_json() + "\n")

    rows = [_eval_row(cfg, nets, 0, rng_eval, t0)]
    enc = make_encoder(cfg, nets)
    dec = Decoder(nets["decoder"], cfg.sigma2)
    pen = make_penalty(cfg, nets) if cfg.objective == "pot" else None

    step = 0
    try:
        for step in range(1, cfg.steps + 1):
            x = ds.draw(cfg.batch_size, rng_data)
            zp = rng_prior.standard_normal((cfg.batch_size, cfg.latent_dim))
            if side == "disc" and not skip_disc:
                for _ in range(cfg.disc_steps):
                    tape = Tape()
                    q = enc.encode(tape, x, rng_noise).z
                    loss = -gan_penalty(ad.detach(q), zp, nets["disc"], "train_T", tape)
                    _check(loss)
                    opts["disc"].step(nets["disc"].params, tape.backward(loss)[nets["disc"].params])
                    counters["disc_updates"] += 1
            elif side == "critic":
                for _ in range(cfg.disc_steps):
                    tape = Tape()
                    wl = wgan_objectives(x, zp, nets["decoder"], nets["critic"], tape)
                    _check(wl.critic)
                    opts["critic"].step(nets["critic"].params, tape.backward(wl.critic)[nets["critic"].params])
                    nets["critic"].clip_(cfg.clip)
                    counters["disc_updates"] += 1
            tape = Tape()
            if cfg.objective == "pot":
                loss = pot_objective(x, enc, dec, pen, cfg.lam, zp, rng_noise, cfg.cost, tape).loss
            elif cfg.objective == "aae":
                loss = aae_objective(x, enc, dec, nets["disc"], zp, rng_noise, tape).loss
            elif cfg.objective == "vae":
                loss = vae_objective(x, enc, dec, rng_noise, tape).loss
            else:
                loss = wgan_objectives(x, zp, nets["decoder"], nets["critic"], tape).generator
            _check(loss)
            grads = tape.backward(loss)
            for r in gen_roles:
                opts[r].step(nets[r].params, grads[nets[r].params])
            counters["gen_updates"] += 1
            if step % cfg.eval_every == 0 or step == cfg.steps:
                rows.append(_eval_row(cfg, nets, step, rng_eval, t0))
            if out_dir is not None and step % ckpt_every == 0 and step != cfg.steps:
                save_checkpoint(out_dir, step, nets)
                _write_metrics(out_dir, rows)
    except (FloatingPointError, NonFiniteGradientError) as exc:
        _snapshot(out_dir, step, nets, str(exc), rows)
        if out_dir is not None:
            _write_metrics(out_dir, rows)
        raise TrainingDivergedError(f"non-finite value at step {step}: {exc}") from exc

    if out_dir is not None:
        save_checkpoint(out_dir, cfg.steps, nets)
        _write_metrics(out_dir, rows)
    rows[-1].details.update(counters)
    return TrainResult(cfg, nets, rows, counters)


def _check(loss) -> None:
    if not np.isfinite(ad.scalar(loss)):
        raise FloatingPointError("non-finite loss")


def _write_metrics(out_dir, rows) -> None:
    write_csv(Path(out_dir) / "metrics.csv", METRICS_HEADER, [r.csv_row() for r in rows])
