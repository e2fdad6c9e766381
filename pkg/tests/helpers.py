"""Shared builders for gradient and identity tests."""

import numpy as np

from potlab import autodiff as ad
from potlab.nn import MlpNet
from potlab.objectives import (AdversarialPenalty, Decoder, DeterministicEncoder, GaussianEncoder, ImplicitEncoder,
                               MomentMatchPenalty, aae_objective, gan_penalty, pot_objective, vae_objective,
                               wgan_objectives)

GRAD_KINDS = ("pot_moment", "pot_adversarial", "pot_euclidean", "pot_implicit", "vae", "aae", "disc", "wgan_critic",
              "wgan_generator")


def tanh_net(widths, rng):
    return MlpNet.init(widths, ["tanh"] * (len(widths) - 2) + ["linear"], rng)


def grad_case(kind, rng, d=2, k=2, hidden=8):
    """Return ``(param vectors, loss_fn(tape, point_rng))`` for one objective."""
    x0 = rng.standard_normal((6, d))
    dec = Decoder(tanh_net([k, hidden, d], rng), 0.3)
    T = tanh_net([k, hidden, 1], rng)
    if kind == "pot_implicit":
        enc = ImplicitEncoder(tanh_net([d + 2, hidden, k], rng), 2)
    elif kind in ("vae", "aae"):
        enc = GaussianEncoder(tanh_net([d, hidden, 2 * k], rng))
    else:
        enc = DeterministicEncoder(tanh_net([d, hidden, k], rng))
    G, critic = tanh_net([k, hidden, d], rng), tanh_net([d, hidden, 1], rng)

    def prior(point_rng):
        return point_rng.standard_normal((6, k))

    if kind == "pot_moment":
        return [enc.net.params, dec.net.params], lambda tape, r: pot_objective(
            x0, enc, dec, MomentMatchPenalty(), 0.7, prior(r), r, tape=tape).loss
    if kind == "pot_adversarial":
        return [enc.net.params, dec.net.params], lambda tape, r: pot_objective(
            x0, enc, dec, AdversarialPenalty(T), 0.7, prior(r), r, tape=tape).loss
    if kind == "pot_euclidean":
        return [enc.net.params, dec.net.params], lambda tape, r: pot_objective(
            x0, enc, dec, MomentMatchPenalty(analytic_prior=True), 1.3, prior(r), r, "euclidean", tape).loss
    if kind == "pot_implicit":
        return [enc.net.params, dec.net.params], lambda tape, r: pot_objective(
            x0, enc, dec, MomentMatchPenalty(), 0.5, prior(r), r, tape=tape).loss
    if kind == "vae":
        return [enc.net.params, dec.net.params], lambda tape, r: vae_objective(x0, enc, dec, r, tape).loss
    if kind == "aae":
        return [enc.net.params, dec.net.params], lambda tape, r: aae_objective(
            x0, enc, dec, T, prior(r), r, tape).loss
    if kind == "disc":
        codes = rng.standard_normal((6, k)) + 0.5
        return [T.params], lambda tape, r: -gan_penalty(codes, prior(r), T, "train_T", tape)
    if kind == "wgan_critic":
        return [critic.params], lambda tape, r: wgan_objectives(x0, prior(r), G, critic, tape).critic
    if kind == "wgan_generator":
        return [G.params], lambda tape, r: wgan_objectives(x0, prior(r), G, critic, tape).generator
    raise ValueError(kind)


def equivalence_case(rng, sigma2):
    d, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    n = int(rng.integers(1, 40))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        enc = DeterministicEncoder(tanh_net([d, 8, k], rng))
    elif kind == 1:
        enc = GaussianEncoder(tanh_net([d, 8, 2 * k], rng))
    else:
        enc = ImplicitEncoder(tanh_net([d + 1, 8, k], rng), 1)
    dec = Decoder(tanh_net([k, 8, d], rng))
    T = tanh_net([k, 8, 1], rng)
    x = 2.0 * rng.standard_normal((n, d))
    zp = rng.standard_normal((int(rng.integers(1, 40)), k))
    return x, enc, dec, T, zp


def identity_net(d):
    net = MlpNet([d, d], ["linear"])
    net.params.view(0)[...] = np.eye(d)
    return net
