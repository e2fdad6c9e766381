import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import GRAD_KINDS, equivalence_case, grad_case, identity_net, tanh_net
from potlab import autodiff as ad
from potlab.autodiff import Tape
from potlab.measures import make_rng
from potlab.nn import Adam, MlpNet, grad_check
from potlab.objectives import (AdversarialPenalty, Decoder, DeterministicEncoder, GaussianEncoder,
                               MomentMatchPenalty, RngMismatchError, aae_objective, aae_pot_equivalence_check,
                               gan_penalty, moment_match_penalty, pot_objective, vae_objective, wgan_objectives)

LOG4 = math.log(4.0)


def offset_decoder(d, shift):
    net = identity_net(d)
    net.params.view(1)[...] = shift
    return Decoder(net)


def const_net(k, out, bias):
    net = MlpNet([k, out], ["linear"])
    net.params.view(1)[...] = bias
    return net


def test_perfect_autoencoder():
    x = make_rng(0).standard_normal((10, 3))
    v = pot_objective(x, DeterministicEncoder(identity_net(3)), Decoder(identity_net(3)), MomentMatchPenalty(), 0.0,
                      x, make_rng(1))
    assert v.recon == 0.0 and v.total == 0.0


def test_constant_offset():
    x = np.array([[0.0], [2.0]])
    v = pot_objective(x, DeterministicEncoder(identity_net(1)), offset_decoder(1, 1.0), MomentMatchPenalty(), 0.0,
                      x, make_rng(1))
    assert v.recon == pytest.approx(1.0, abs=1e-15)


def test_matched_moments_penalty_zero():
    x = make_rng(2).standard_normal((16, 2))
    enc = DeterministicEncoder(identity_net(2))
    v = pot_objective(x, enc, offset_decoder(2, 0.5), MomentMatchPenalty(), 3.0, x.copy(), make_rng(1))
    assert v.penalty == 0.0
    assert v.total == v.recon


def test_total_decomposition():
    rng = make_rng(3)
    x = rng.standard_normal((12, 2))
    enc = DeterministicEncoder(tanh_net([2, 8, 2], rng))
    dec = Decoder(tanh_net([2, 8, 2], rng))
    for pen in (MomentMatchPenalty(), AdversarialPenalty(tanh_net([2, 4, 1], rng))):
        v = pot_objective(x, enc, dec, pen, 0.37, rng.standard_normal((12, 2)), rng)
        assert abs(v.total - (v.recon + 0.37 * v.penalty)) <= 1e-9


def test_pot_errors():
    x = np.zeros((2, 1))
    enc, dec = DeterministicEncoder(identity_net(1)), Decoder(identity_net(1))
    with pytest.raises(ValueError):
        pot_objective(x, enc, dec, MomentMatchPenalty(), -1.0, x, make_rng(0))
    with pytest.raises(ValueError):
        pot_objective(np.zeros((0, 1)), enc, dec, MomentMatchPenalty(), 1.0, x, make_rng(0))


def test_lambda_zero_is_plain_autoencoder():
    rng = make_rng(4)
    x = rng.standard_normal((20, 2))
    enc = DeterministicEncoder(MlpNet.init([2, 8, 2], ["relu", "linear"], rng))
    dec = Decoder(MlpNet.init([2, 8, 2], ["relu", "linear"], rng))
    v = pot_objective(x, enc, dec, MomentMatchPenalty(), 0.0, rng.standard_normal((20, 2)), rng)
    diff = dec.net.predict(enc.net.predict(x)) - x
    assert v.recon == float(np.mean(np.einsum("ij,ij->i", diff, diff)))


def test_gan_constant_half():
    T = MlpNet([2, 1], ["linear"])
    v = gan_penalty(np.ones((5, 2)), np.zeros((3, 2)), T)
    assert ad.scalar(v) == pytest.approx(-LOG4, abs=1e-12)


def test_gan_separating_limit():
    T = MlpNet([1, 1], ["linear"])
    T.params.values[:] = [40.0, 0.0]
    v = gan_penalty(-np.ones((4, 1)), np.ones((4, 1)), T)
    assert abs(ad.scalar(v)) < 1e-6


def test_gan_trained_on_identical_batches():
    rng = make_rng(5)
    p = rng.standard_normal((256, 2))
    T = tanh_net([2, 16, 1], rng)
    opt = Adam(lr=1e-2)
    for _ in range(300):
        tape = Tape()
        loss = -gan_penalty(p, p, T, "train_T", tape)
        opt.step(T.params, tape.backward(loss)[T.params])
    assert abs(ad.scalar(gan_penalty(p, p, T)) + LOG4) <= 0.15


def test_gan_errors():
    T = MlpNet([2, 1], ["linear"])
    with pytest.raises(ValueError):
        gan_penalty(np.zeros((3, 2)), np.zeros((3, 3)), T)
    with pytest.raises(ValueError):
        gan_penalty(np.zeros((3, 2)), np.zeros((3, 2)), T, mode="bogus")


def test_gan_train_mode_detaches_codes():
    rng = make_rng(6)
    enc = DeterministicEncoder(tanh_net([2, 4, 2], rng))
    T = tanh_net([2, 4, 1], rng)
    tape = Tape()
    q = enc.encode(tape, rng.standard_normal((5, 2)), rng).z
    grads = tape.backward(gan_penalty(q, rng.standard_normal((5, 2)), T, "train_T", tape))
    assert not np.any(grads[enc.net.params])
    assert np.any(grads[T.params])


def test_vae_prior_posterior():
    enc = GaussianEncoder(MlpNet([2, 4], ["linear"]))
    dec = Decoder(MlpNet([2, 2], ["linear"]), 0.5)
    v = vae_objective(np.ones((3, 2)), enc, dec, make_rng(0))
    assert v.penalty == 0.0


def test_vae_kl_half():
    enc = GaussianEncoder(const_net(2, 4, [1.0, 0.0, 0.0, 0.0]))
    dec = Decoder(MlpNet([2, 2], ["linear"]), 0.5)
    assert vae_objective(np.ones((3, 2)), enc, dec, make_rng(0)).penalty == pytest.approx(0.5, abs=1e-15)


def test_vae_recon_constant():
    enc = GaussianEncoder(MlpNet([2, 4], ["linear"]))
    x = np.array([[0.3, -1.2]] * 4)
    dec = Decoder(const_net(2, 2, x[0]), 0.5)
    v = vae_objective(x, enc, dec, make_rng(0))
    assert v.recon == pytest.approx(math.log(2 * math.pi * 0.5), abs=1e-12)
    assert v.recon == pytest.approx(1.1447298858494002, abs=1e-12)


def test_vae_errors():
    dec0 = Decoder(MlpNet([2, 2], ["linear"]), 0.0)
    with pytest.raises(ValueError):
        vae_objective(np.ones((2, 2)), GaussianEncoder(MlpNet([2, 4], ["linear"])), dec0, make_rng(0))
    with pytest.raises(TypeError):
        vae_objective(np.ones((2, 2)), DeterministicEncoder(identity_net(2)), Decoder(identity_net(2), 1.0),
                      make_rng(0))
    with pytest.raises(ValueError):
        Decoder(identity_net(2), -1.0)


def test_log_sigma_clamped():
    enc = GaussianEncoder(const_net(1, 2, [0.0, 500.0]))
    tape = Tape()
    e = enc.encode(tape, np.zeros((3, 1)), make_rng(0))
    assert np.all(e.log_sigma.value == 10.0)


def test_aae_perfect_reconstruction():
    d, s2 = 2, 0.7
    x = np.array([[1.0, 2.0]] * 3)
    enc = DeterministicEncoder(MlpNet([2, 2], ["linear"]))
    dec = Decoder(const_net(2, 2, x[0]), s2)
    T = MlpNet([2, 1], ["linear"])
    v = aae_objective(x, enc, dec, T, np.zeros((4, 2)), make_rng(0))
    assert v.total == pytest.approx(-LOG4 + d / 2 * math.log(2 * math.pi * s2), abs=1e-12)


def test_aae_single_sample_batch():
    rng = make_rng(7)
    v = aae_objective(rng.standard_normal((1, 2)), DeterministicEncoder(tanh_net([2, 4, 2], rng)),
                      Decoder(tanh_net([2, 4, 2], rng), 0.2), tanh_net([2, 4, 1], rng), rng.standard_normal((1, 2)),
                      rng)
    assert np.isfinite(v.total)


def test_aae_rejects_dirac_decoder():
    with pytest.raises(ValueError):
        aae_objective(np.zeros((2, 2)), DeterministicEncoder(identity_net(2)), Decoder(identity_net(2)),
                      MlpNet([2, 1], ["linear"]), np.zeros((2, 2)), make_rng(0))


def test_equivalence_seed_2():
    rng = make_rng(2)
    enc = GaussianEncoder(tanh_net([2, 8, 4], rng))
    dec = Decoder(tanh_net([2, 8, 2], rng))
    T = tanh_net([2, 8, 1], rng)
    x, zp = rng.standard_normal((32, 2)), rng.standard_normal((32, 2))
    assert aae_pot_equivalence_check(x, enc, dec, T, zp, 0.5, rng) <= 1e-9


def test_equivalence_independent_recomputation():
    # both sides rebuilt from scratch with numpy on the same codes
    rng = make_rng(12)
    enc = DeterministicEncoder(tanh_net([2, 8, 2], rng))
    dec = Decoder(tanh_net([2, 8, 2], rng))
    T = tanh_net([2, 8, 1], rng)
    x, zp = rng.standard_normal((16, 2)), rng.standard_normal((16, 2))
    s2 = 0.5
    z = enc.net.predict(x)
    mse = np.mean(np.sum((x - dec.net.predict(z)) ** 2, axis=1))

    def t(v):
        return np.clip(1 / (1 + np.exp(-T.predict(v).ravel())), 1e-7, 1 - 1e-7)

    dgan = np.mean(np.log(t(zp))) + np.mean(np.log(1 - t(z)))
    pot = pot_objective(x, enc, Decoder(dec.net, s2), AdversarialPenalty(T), 2 * s2, zp, make_rng(0))
    aae = aae_objective(x, enc, Decoder(dec.net, s2), T, zp, make_rng(0))
    assert pot.total == pytest.approx(mse + 2 * s2 * dgan, abs=1e-12)
    assert aae.total == pytest.approx(dgan + mse / (2 * s2) + math.log(2 * math.pi * s2), abs=1e-12)


def test_equivalence_constants_only():
    x = np.array([[0.5, -0.5]] * 3)
    enc = DeterministicEncoder(MlpNet([2, 2], ["linear"]))
    dec = Decoder(const_net(2, 2, x[0]))
    T = MlpNet([2, 1], ["linear"])
    assert aae_pot_equivalence_check(x, enc, dec, T, np.zeros((3, 2)), 1.0, make_rng(0)) <= 1e-12


def test_equivalence_small_sigma():
    x, enc, dec, T, zp = equivalence_case(make_rng(14), 0.01)
    assert aae_pot_equivalence_check(x, enc, dec, T, zp, 0.01, make_rng(15)) <= 1e-9


def test_equivalence_detects_mismatched_streams():
    rng = make_rng(16)
    enc = GaussianEncoder(tanh_net([2, 4, 4], rng))
    with pytest.raises(RngMismatchError):
        aae_pot_equivalence_check(rng.standard_normal((4, 2)), enc, Decoder(tanh_net([2, 4, 2], rng)),
                                  tanh_net([2, 4, 1], rng), np.zeros((4, 2)), 0.5, make_rng(1), make_rng(2))


@given(st.integers(0, 100_000), st.floats(0.01, 2.0))
def test_equivalence_property(seed, s2):
    x, enc, dec, T, zp = equivalence_case(make_rng(seed, 80), s2)
    assert aae_pot_equivalence_check(x, enc, dec, T, zp, s2, make_rng(seed, 81)) <= 1e-9


def test_wgan_constant_critic():
    rng = make_rng(8)
    G = tanh_net([2, 4, 2], rng)
    T = const_net(2, 1, [0.3])
    assert wgan_objectives(rng.standard_normal((5, 2)), rng.standard_normal((7, 2)), G, T).critic_value == 0.0


def test_wgan_linear_witness():
    T = identity_net(1)
    G = identity_net(1)
    x = np.array([[1.0], [3.0]])
    z = np.array([[-1.0], [1.0]])
    w = wgan_objectives(x, z, G, T)
    assert -w.critic_value == pytest.approx(2.0)
    assert w.generator_value == pytest.approx(0.0)


def test_wgan_identical_batches():
    rng = make_rng(9)
    x = rng.standard_normal((6, 2))
    assert wgan_objectives(x, x, identity_net(2), tanh_net([2, 5, 1], rng)).critic_value == 0.0


def test_wgan_shape_error():
    with pytest.raises(ValueError):
        wgan_objectives(np.zeros((2, 3)), np.zeros((2, 2)), identity_net(2), MlpNet([3, 1], ["linear"]))


@given(st.integers(0, 100_000), st.booleans())
def test_moment_match_nonnegative(seed, analytic):
    rng = make_rng(seed, 82)
    q, p = rng.standard_normal((10, 2)), rng.standard_normal((12, 2))
    assert ad.scalar(moment_match_penalty(q, p, MomentMatchPenalty(analytic_prior=analytic))) >= 0.0


@given(st.integers(0, 100_000), st.floats(1e-4, 1.0))
def test_moment_match_zero_iff_moments_agree(seed, delta):
    rng = make_rng(seed, 83)
    p = rng.standard_normal((20, 2))
    pen = MomentMatchPenalty()
    assert ad.scalar(moment_match_penalty(p.copy(), p, pen)) <= 1e-18
    # a bare shift keeps the covariance and moves the mean by delta
    assert ad.scalar(moment_match_penalty(p + delta, p, pen)) == pytest.approx(2 * delta**2, rel=1e-6)


def test_moment_match_analytic_prior():
    q = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]) * math.sqrt(2)
    # mean 0 and covariance I exactly
    assert ad.scalar(moment_match_penalty(q, None, MomentMatchPenalty(analytic_prior=True))) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("kind", GRAD_KINDS)
def test_objective_gradients(kind):
    rng = make_rng(GRAD_KINDS.index(kind), 84)
    params, loss = grad_case(kind, rng)
    assert grad_check(params, loss, rng) <= 1e-5


@given(st.integers(0, 100_000), st.floats(0.0, 1.0))
def test_components_finite(seed, scale):
    rng = make_rng(seed, 85)
    x = 50 * scale * rng.standard_normal((8, 2))
    enc = GaussianEncoder(tanh_net([2, 8, 4], rng))
    enc.net.params.values *= 100 * scale
    dec = Decoder(tanh_net([2, 8, 2], rng), 0.1)
    T = tanh_net([2, 8, 1], rng)
    T.params.values *= 100 * scale
    zp = rng.standard_normal((8, 2))
    for v in (pot_objective(x, enc, dec, AdversarialPenalty(T), 1.0, zp, rng), vae_objective(x, enc, dec, rng),
              aae_objective(x, enc, dec, T, zp, rng)):
        assert np.isfinite([v.total, v.recon, v.penalty]).all()
