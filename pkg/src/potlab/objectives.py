"""Training objectives over a shared encoder/decoder abstraction.

Every objective returns an ``ObjectiveValue`` whose float fields are the
reported numbers and whose ``loss`` is the tape variable to descend.  For
adversarial penalties the two differ: the reported penalty is the literal
discrimination value ``E_p log T + E_q log(1 - T)``, while the encoder
descends the non-saturating surrogate ``-E_q log T``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .nn import MlpNet

T_FLOOR = 1e-7
LOG_SIGMA_BOUND = 10.0


class RngMismatchError(RuntimeError):
    pass


# --- encoders / decoders / penalties ---------------------------------------------


@dataclass
class Encoded:
    z: Var
    eps: np.ndarray
    mu: Optional[Var] = None
    log_sigma: Optional[Var] = None


@dataclass
class DeterministicEncoder:
    net: MlpNet

    @property
    def latent_dim(self) -> int:
        return self.net.out_dim

    def encode(self, tape: Tape, x, rng: np.random.Generator) -> Encoded:
        return Encoded(z=self.net(tape, x), eps=np.zeros((0,)))

    def codes(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.net.predict(x)

    @property
    def nets(self):
        return [self.net]


@dataclass
class GaussianEncoder:
    """Net outputs ``[mu, log_sigma]``; ``z = mu + sigma * eps``."""

    net: MlpNet

    @property
    def latent_dim(self) -> int:
        return self.net.out_dim // 2

    def _heads(self, tape, x):
        out = self.net(tape, x)
        k = self.latent_dim
        mu = out[:, :k]
        log_sigma = ad.clip(out[:, k:], -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
        return mu, log_sigma

    def encode(self, tape: Tape, x, rng: np.random.Generator) -> Encoded:
        mu, log_sigma = self._heads(tape, x)
        eps = rng.standard_normal(mu.shape)
        z = mu + ad.exp(log_sigma) * eps
        return Encoded(z=z, eps=eps, mu=mu, log_sigma=log_sigma)

    def codes(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = self.net.predict(x)
        k = self.latent_dim
        ls = np.clip(out[:, k:], -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
        return out[:, :k] + np.exp(ls) * rng.standard_normal((out.shape[0], k))

    @property
    def nets(self):
        return [self.net]


@dataclass
class ImplicitEncoder:
    """``z = e(x, eps)`` with ``eps ~ N(0, I_noise_dim)`` appended to the input."""

    net: MlpNet
    noise_dim: int

    @property
    def latent_dim(self) -> int:
        return self.net.out_dim

    def encode(self, tape: Tape, x, rng: np.random.Generator) -> Encoded:
        xv = ad.value_of(x)
        eps = rng.standard_normal((xv.shape[0], self.noise_dim))
        inp = ad.concat([tape.lift(x), tape.constant(eps)], axis=1)
        return Encoded(z=self.net(tape, inp), eps=eps)

    def codes(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((x.shape[0], self.noise_dim))
        return self.net.predict(np.concatenate([x, eps], axis=1))

    @property
    def nets(self):
        return [self.net]


Encoder = Union[DeterministicEncoder, GaussianEncoder, ImplicitEncoder]


@dataclass
class Decoder:
    net: MlpNet
    sigma2: float = 0.0

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ValueError("decoder variance must be >= 0")


@dataclass
class AdversarialPenalty:
    disc: MlpNet
    steps: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("discriminator needs at least one inner step")


@dataclass
class MomentMatchPenalty:
    """``w_m ||mean_q - mean_p||^2 + w_c ||cov_q - cov_p||_F^2``.

    With ``analytic_prior`` the prior moments are the standard normal's
    ``(0, I)`` rather than batch estimates.
    """

    mean_weight: float = 1.0
    cov_weight: float = 1.0
    analytic_prior: bool = False


Penalty = Union[AdversarialPenalty, MomentMatchPenalty]


@dataclass
class ObjectiveValue:
    total: float
    recon: float
    penalty: float
    loss: Optional[Var] = None
    extra: dict = field(default_factory=dict)


# --- building blocks ------------------------------------------------------------------


def eps_checksum(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def reconstruction_cost(x, y: Var, cost: str) -> Var:
    """Per-row ``c(x_i, y_i)``."""
    diff = y - x
    if cost == "sq_euclidean":
        return ad.row_sq_norm(diff)
    if cost == "euclidean":
        return ad.row_norm(diff)
    raise ValueError(f"unknown cost {cost!r}; valid: ('sq_euclidean', 'euclidean')")


def disc_prob(T: MlpNet, tape: Tape, z) -> Var:
    """Sigmoid discriminator output clamped to ``[1e-7, 1 - 1e-7]``."""
    return ad.clip(ad.sigmoid(T(tape, z)), T_FLOOR, 1.0 - T_FLOOR)


def gan_penalty(q_batch, p_batch, T: MlpNet, mode: str = "eval_penalty", tape: Optional[Tape] = None) -> Var:
    """``E_p[log T(p)] + E_q[log(1 - T(q))]`` with prior codes in the real slot.

    ``train_T`` detaches ``q_batch`` (the value is ascended in T);
    ``eval_penalty`` keeps it attached so gradients reach the encoder.
    """
    if mode not in ("train_T", "eval_penalty"):
        raise ValueError(f"unknown mode {mode!r}; valid: ('train_T', 'eval_penalty')")
    if tape is None:
        tape = q_batch.tape if isinstance(q_batch, Var) else Tape()
    q = tape.lift(q_batch)
    p = tape.lift(p_batch)
    if q.value.ndim != 2 or p.value.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ValueError(f"latent batches have shapes {q.shape} and {p.shape}")
    if q.shape[0] == 0 or p.shape[0] == 0:
        raise ValueError("latent batches must be non-empty")
    if mode == "train_T":
        q = ad.detach(q)
    tp = disc_prob(T, tape, p)
    tq = disc_prob(T, tape, q)
    return ad.log(tp).mean() + ad.log(1.0 - tq).mean()


def nonsaturating_loss(q: Var, T: MlpNet) -> Var:
    return -ad.log(disc_prob(T, q.tape, q)).mean()


def _cov(z: Var) -> Var:
    n = z.shape[0]
    zc = z - z.mean(axis=0)
    return (zc.T @ zc) * (1.0 / n)


def moment_match_penalty(q, p, pen: MomentMatchPenalty, tape: Optional[Tape] = None) -> Var:
    if tape is None:
        tape = q.tape if isinstance(q, Var) else Tape()
    q = tape.lift(q)
    k = q.shape[1]
    if pen.analytic_prior:
        mean_p = tape.constant(np.zeros(k))
        cov_p = tape.constant(np.eye(k))
    else:
        p = tape.lift(p)
        if p.shape[1] != k:
            raise ValueError(f"latent batches have shapes {q.shape} and {p.shape}")
        mean_p = p.mean(axis=0)
        cov_p = _cov(p)
    dm = q.mean(axis=0) - mean_p
    dc = _cov(q) - cov_p
    return pen.mean_weight * ad.square(dm).sum() + pen.cov_weight * ad.square(dc).sum()


def _gaussian_nll(x, y: Var, sigma2: float):
    """Per-batch mean of ``||x - y||^2 / (2 s2) + (d/2) log(2 pi s2)``."""
    d = ad.value_of(x).shape[1]
    const = 0.5 * d * math.log(2.0 * math.pi * sigma2)
    return ad.row_sq_norm(y - x).mean() * (1.0 / (2.0 * sigma2)) + const, const


def _batch(x) -> np.ndarray:
    xv = np.asarray(ad.value_of(x), dtype=np.float64)
    if xv.ndim != 2 or xv.shape[0] == 0:
        raise ValueError("data batch must be a non-empty 2-D array")
    return xv


def _finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite activation in objective")


# --- objectives ---------------------------------------------------------------------------


def pot_objective(x_batch, enc: Encoder, dec: Decoder, pen: Penalty, lam: float, z_prior,
                  rng: np.random.Generator, cost: str = "sq_euclidean", tape: Optional[Tape] = None) -> ObjectiveValue:
    """Reconstruction cost plus ``lam`` times a latent penalty."""
    if not lam >= 0:
        raise ValueError("lambda must be >= 0")
    xv = _batch(x_batch)
    tape = Tape() if tape is None else tape
    e = enc.encode(tape, xv, rng)
    y = dec.net(tape, e.z)
    recon = reconstruction_cost(xv, y, cost).mean()
    extra = {"eps_checksum": eps_checksum(e.eps)}
    if isinstance(pen, AdversarialPenalty):
        pen_val = gan_penalty(e.z, z_prior, pen.disc, "eval_penalty", tape)
        surrogate = nonsaturating_loss(e.z, pen.disc)
        loss = recon + lam * surrogate if lam > 0 else recon
        extra["nonsaturating"] = ad.scalar(surrogate)
    else:
        pen_val = moment_match_penalty(e.z, z_prior, pen, tape)
        loss = recon + lam * pen_val if lam > 0 else recon
    r, p = ad.scalar(recon), ad.scalar(pen_val)
    _finite(r, p)
    return ObjectiveValue(total=r + lam * p, recon=r, penalty=p, loss=loss, extra=extra)


def vae_objective(x_batch, enc: GaussianEncoder, dec: Decoder, rng: np.random.Generator,
                  tape: Optional[Tape] = None) -> ObjectiveValue:
    """Closed-form KL to N(0, I) plus a one-sample Gaussian reconstruction term."""
    if not isinstance(enc, GaussianEncoder):
        raise TypeError("the VAE objective needs a gaussian_diag encoder")
    if not dec.sigma2 > 0:
        raise ValueError("the VAE objective is undefined for a deterministic decoder (sigma2 = 0)")
    xv = _batch(x_batch)
    tape = Tape() if tape is None else tape
    e = enc.encode(tape, xv, rng)
    var = ad.exp(2.0 * e.log_sigma)
    kl = ((ad.square(e.mu) + var - 2.0 * e.log_sigma - 1.0).sum(axis=1) * 0.5).mean()
    y = dec.net(tape, e.z)
    recon, const = _gaussian_nll(xv, y, dec.sigma2)
    k, r = ad.scalar(kl), ad.scalar(recon)
    _finite(k, r)
    return ObjectiveValue(total=k + r, recon=r, penalty=k, loss=kl + recon,
                          extra={"log_const": const, "eps_checksum": eps_checksum(e.eps)})


def aae_objective(x_batch, enc: Encoder, dec: Decoder, T: MlpNet, z_prior, rng: np.random.Generator,
                  tape: Optional[Tape] = None) -> ObjectiveValue:
    """Adversarial latent penalty plus Gaussian negative log-density."""
    if not dec.sigma2 > 0:
        raise ValueError("the AAE objective needs sigma2 > 0")
    xv = _batch(x_batch)
    tape = Tape() if tape is None else tape
    e = enc.encode(tape, xv, rng)
    y = dec.net(tape, e.z)
    recon, const = _gaussian_nll(xv, y, dec.sigma2)
    pen_val = gan_penalty(e.z, z_prior, T, "eval_penalty", tape)
    surrogate = nonsaturating_loss(e.z, T)
    r, p = ad.scalar(recon), ad.scalar(pen_val)
    _finite(r, p)
    return ObjectiveValue(total=p + r, recon=r, penalty=p, loss=recon + surrogate,
                          extra={"log_const": const, "eps_checksum": eps_checksum(e.eps)})


def aae_pot_equivalence_check(x_batch, enc: Encoder, dec: Decoder, T: MlpNet, z_prior, sigma2: float,
                              rng: np.random.Generator, rng_aae: Optional[np.random.Generator] = None) -> float:
    """``|D_POT - 2 s2 (D_AAE - kappa)| / max(1, |D_POT|)`` at ``lambda = 2 s2``.

    Both objectives see the same noise: the AAE side runs on a copy of
    ``rng`` unless ``rng_aae`` is given, and the drawn noise is compared by
    checksum.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    import copy

    if rng_aae is None:
        rng_aae = copy.deepcopy(rng)
    dec_s = Decoder(dec.net, sigma2)
    pot = pot_objective(x_batch, enc, dec_s, AdversarialPenalty(T), 2.0 * sigma2, z_prior, rng, "sq_euclidean")
    aae = aae_objective(x_batch, enc, dec_s, T, z_prior, rng_aae)
    if pot.extra["eps_checksum"] != aae.extra["eps_checksum"]:
        raise RngMismatchError("POT and AAE evaluations drew different encoder noise")
    kappa = aae.extra["log_const"]
    return abs(pot.total - 2.0 * sigma2 * (aae.total - kappa)) / max(1.0, abs(pot.total))


@dataclass
class WganLosses:
    critic: Var
    generator: Var
    critic_value: float
    generator_value: float


def wgan_objectives(x_batch, z_batch, G: MlpNet, T: MlpNet, tape: Optional[Tape] = None) -> WganLosses:
    """Critic loss ``-(mean T(x) - mean T(G(z)))`` and generator loss ``-mean T(G(z))``."""
    xv = _batch(x_batch)
    zv = _batch(z_batch)
    tape = Tape() if tape is None else tape
    gz = G(tape, zv)
    if gz.shape[1] != xv.shape[1]:
        raise ValueError(f"generator emits dim {gz.shape[1]} but data has dim {xv.shape[1]}")
    t_real = T(tape, xv).mean()
    t_fake = T(tape, gz).mean()
    critic = -(t_real - t_fake)
    gen = -t_fake
    return WganLosses(critic=critic, generator=gen,
                      critic_value=ad.scalar(critic), generator_value=ad.scalar(gen))
