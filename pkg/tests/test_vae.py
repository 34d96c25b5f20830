"""Causal VAE: shapes, causality, losses."""
import numpy as np
import pytest

from causalmotion.nn import ParamTree, grad_check, ops
from causalmotion.nn.tensor import Tensor
from causalmotion.types import MotionSequence
from causalmotion.vae import (
    LatentDistribution,
    VaeConfig,
    decode,
    decode_t,
    encode,
    encode_t,
    init_vae_params,
    reparameterize,
    vae_loss,
    vae_loss_t,
)

from conftest import ReluKinkRecorder, tiny_vae_config


@pytest.fixture
def params(rng):
    return init_vae_params(tiny_vae_config(), rng)


class TestEncode:
    def test_latent_length_is_quarter(self, rng, params):
        dist = encode(MotionSequence(rng.normal(size=(16, 4))), params)
        assert dist.mu.shape == (4, params.config.latent_dim)

    def test_latent_length_law_ceil(self, rng, params):
        for T in (4, 5, 7, 8, 13, 16, 33, 64):
            dist = encode(MotionSequence(rng.normal(size=(T, 4))), params)
            assert dist.mu.shape[0] == -(-T // 4), f"T={T}"

    def test_too_short_rejected(self, params):
        with pytest.raises(ValueError):
            encode(MotionSequence(np.ones((3, 4))), params)

    def test_prefix_invariance(self, rng, params):
        x = rng.normal(size=(16, 4))
        base = encode(MotionSequence(x), params)
        x2 = x.copy()
        x2[12:] += rng.normal(size=(4, 4)) * 5
        pert = encode(MotionSequence(x2), params)
        assert np.array_equal(base.mu[:3], pert.mu[:3])
        assert np.array_equal(base.logvar[:3], pert.logvar[:3])

    def test_zero_input_finite(self, params):
        dist = encode(MotionSequence(np.zeros((16, 4))), params)
        assert dist.mu.shape == (4, params.config.latent_dim)
        assert np.all(np.isfinite(dist.mu)) and np.all(np.isfinite(dist.logvar))


class TestReparameterize:
    def test_zero_noise_returns_mu(self, rng):
        mu = rng.normal(size=(4, 3))
        dist = LatentDistribution(mu=mu, logvar=rng.normal(size=(4, 3)))
        np.testing.assert_array_equal(reparameterize(dist, np.zeros_like(mu)), mu)

    def test_tiny_logvar_collapses_to_mu(self, rng):
        mu = rng.normal(size=(4, 3))
        dist = LatentDistribution(mu=mu, logvar=np.full((4, 3), -30.0))
        z = reparameterize(dist, rng.normal(size=(4, 3)))
        np.testing.assert_allclose(z, mu, atol=1e-6)

    def test_shape_mismatch_rejected(self, rng):
        dist = LatentDistribution(mu=np.zeros((4, 3)), logvar=np.zeros((4, 3)))
        with pytest.raises(ValueError):
            reparameterize(dist, np.zeros((3, 4)))

    def test_monte_carlo_moments(self, rng):
        mu = np.array([[0.7, -1.2]])
        logvar = np.array([[0.4, -0.8]])
        dist = LatentDistribution(mu=mu, logvar=logvar)
        n = 100_000
        noise = rng.normal(size=(n, 1, 2))
        samples = np.stack([reparameterize(dist, noise[i]) for i in range(n)])
        std = np.exp(logvar / 2)
        se_mean = std / np.sqrt(n)
        assert np.all(np.abs(samples.mean(axis=0) - mu) < 3 * se_mean)
        var = np.exp(logvar)
        se_var = var * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(samples.var(axis=0) - var) < 3 * se_var)


class TestDecode:
    def test_output_length_four_u(self, rng, params):
        out = decode(rng.normal(size=(4, params.config.latent_dim)), params)
        assert out.frames.shape == (16, 4)

    def test_prefix_invariance_four_frame_granularity(self, rng, params):
        z = rng.normal(size=(4, params.config.latent_dim))
        base = decode(z, params)
        z2 = z.copy()
        z2[3] += 7.0
        pert = decode(z2, params)
        assert np.array_equal(base.frames[:12], pert.frames[:12])

    def test_empty_latents_rejected(self, params):
        with pytest.raises(ValueError):
            decode(np.zeros((0, params.config.latent_dim)), params)


class TestVaeLoss:
    def test_perfect_reconstruction_standard_prior_is_zero(self, rng):
        x = rng.normal(size=(8, 4))
        dist = LatentDistribution(mu=np.zeros((2, 3)), logvar=np.zeros((2, 3)))
        total, parts = vae_loss(x, x.copy(), dist, beta=1.0)
        assert total == 0.0 and parts["rec"] == 0.0 and parts["kl"] == 0.0

    def test_kl_single_element_half(self):
        x = np.zeros((4, 4))
        dist = LatentDistribution(mu=np.array([[1.0]]), logvar=np.array([[0.0]]))
        total, parts = vae_loss(x, x, dist, beta=1.0)
        assert abs(parts["kl"] - 0.5) < 1e-12
        assert abs(total - 0.5) < 1e-12

    def test_matches_straight_line_formula(self, rng):
        x = rng.normal(size=(8, 4))
        x_hat = rng.normal(size=(8, 4))
        mu = rng.normal(size=(2, 3))
        logvar = rng.normal(size=(2, 3))
        beta = 0.7
        total, parts = vae_loss(x, x_hat, LatentDistribution(mu=mu, logvar=logvar), beta)
        rec = np.mean((x - x_hat) ** 2)
        kl = np.mean(0.5 * (mu**2 + np.exp(logvar) - 1.0 - logvar))
        assert abs(total - (rec + beta * kl)) <= 1e-10

    def test_kl_nonnegative_property(self, rng):
        x = np.zeros((4, 4))
        for _ in range(50):
            dist = LatentDistribution(
                mu=rng.normal(size=(3, 2)) * 3, logvar=rng.normal(size=(3, 2)) * 2
            )
            _, parts = vae_loss(x, x, dist, beta=1.0)
            assert parts["kl"] >= 0.0

    def test_nonfinite_rejected(self, rng):
        x = rng.normal(size=(4, 4))
        bad = x.copy()
        bad[0, 0] = np.nan
        dist = LatentDistribution(mu=np.zeros((1, 2)), logvar=np.zeros((1, 2)))
        with pytest.raises(Exception):
            vae_loss(x, bad, dist, beta=1.0)


def test_full_vae_loss_gradient(rng):
    cfg = VaeConfig(motion_dim=4, latent_dim=2, channels=3)
    x = rng.normal(size=(8, 4))

    for attempt in range(6):
        gen = np.random.default_rng(100 + attempt)
        params = init_vae_params(cfg, gen)
        for path in params.tree.paths():  # random biases keep relus off their kinks
            if path.endswith(".b"):
                params.tree[path] = gen.normal(0.0, 0.1, params.tree[path].shape)
        noise = np.random.default_rng(200 + attempt).normal(size=(2, 2))

        def loss(lv):
            mu, logvar = encode_t(Tensor(x), lv, cfg)
            z = mu + ops.exp(logvar * 0.5) * Tensor(noise)
            x_hat = decode_t(z, lv, cfg)
            total, _, _ = vae_loss_t(Tensor(x), x_hat, mu, logvar, beta=1.0)
            return total

        with ReluKinkRecorder() as rec:
            loss(params.tree.bind())
        if rec.min_abs <= 1e-4:
            continue
        assert grad_check(loss, params.tree) <= 1e-4
        return
    pytest.fail("could not find a kink-free instance")
