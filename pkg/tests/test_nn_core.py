"""Kernels and the gradient-verification harness."""
import numpy as np
import pytest

from causalmotion.align import mcos_loss
from causalmotion.diffusion import build_schedule, df_training_loss
from causalmotion.errors import ConfigError
from causalmotion.nn import ParamTree, apply_rope, causal_attention, grad_check, ops
from causalmotion.nn.tensor import Tensor
from causalmotion.rng import RngKey
from causalmotion.types import TextCondition

from conftest import randomized_dit_tree, tiny_dit_config


def _attn(q, k, v, heads=2):
    return causal_attention(Tensor(q), Tensor(k), Tensor(v), heads).data


class TestCausalAttention:
    def test_single_row_returns_v(self, rng):
        q, k, v = (rng.normal(size=(1, 8)) for _ in range(3))
        np.testing.assert_allclose(_attn(q, k, v), v)

    def test_identical_keys_average_prefix(self, rng):
        T = 6
        q = rng.normal(size=(T, 8))
        k = np.tile(rng.normal(size=(1, 8)), (T, 1))
        v = rng.normal(size=(T, 8))
        out = _attn(q, k, v)
        for t in range(T):
            np.testing.assert_allclose(out[t], v[: t + 1].mean(axis=0), atol=1e-12)

    def test_prefix_invariance_bit_exact(self, rng):
        q, k, v = (rng.normal(size=(9, 8)) for _ in range(3))
        base = _attn(q, k, v)
        v2 = v.copy()
        v2[5] += 10.0
        assert np.array_equal(_attn(q, k, v2)[:5], base[:5])
        k2 = k.copy()
        k2[5:] -= 3.0
        assert np.array_equal(_attn(q, k2, v)[:5], base[:5])

    def test_prefix_matches_truncated_recompute(self, rng):
        q, k, v = (rng.normal(size=(9, 8)) for _ in range(3))
        full = _attn(q, k, v)
        for t in (1, 4, 9):
            trunc = _attn(q[:t], k[:t], v[:t])
            np.testing.assert_allclose(full[:t], trunc, rtol=1e-6, atol=1e-12)

    def test_dim_not_divisible_raises(self, rng):
        q = rng.normal(size=(3, 9))
        with pytest.raises(ConfigError):
            causal_attention(Tensor(q), Tensor(q), Tensor(q), heads=2)

    def test_deterministic(self, rng):
        q, k, v = (rng.normal(size=(7, 8)) for _ in range(3))
        assert np.array_equal(_attn(q, k, v), _attn(q, k, v))


class TestRope:
    def test_position_zero_is_identity(self, rng):
        x = rng.normal(size=(1, 12))
        np.testing.assert_array_equal(apply_rope(Tensor(x), np.zeros(1)).data, x)

    def test_norm_preserved(self, rng):
        x = rng.normal(size=(11, 16))
        out = apply_rope(Tensor(x), np.arange(11) + 3).data
        np.testing.assert_allclose(
            np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1), rtol=1e-6
        )

    def test_shift_equivariance(self, rng):
        for trial in range(5):
            q = rng.normal(size=(6, 8))
            k = rng.normal(size=(6, 8))
            pos = np.arange(6)
            for shift in (1, 17, 301):
                a = apply_rope(Tensor(q), pos).data
                b = apply_rope(Tensor(k), pos).data
                a2 = apply_rope(Tensor(q), pos + shift).data
                b2 = apply_rope(Tensor(k), pos + shift).data
                lhs = (a * b).sum(axis=1)
                rhs = (a2 * b2).sum(axis=1)
                np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-8)

    def test_odd_dim_rejected(self, rng):
        with pytest.raises(ConfigError):
            apply_rope(Tensor(rng.normal(size=(2, 7))), np.arange(2))


class TestGradCheck:
    def test_quadratic_is_exact(self, rng):
        params = ParamTree({"p": rng.normal(size=(5, 3))})
        err = grad_check(lambda lv: (lv["p"] * lv["p"]).sum() * 0.5, params)
        assert err <= 1e-10

    def test_mcos_loss_gradient(self, rng):
        for trial in range(3):
            zp = rng.normal(size=(4, 8))
            f = rng.normal(size=(4, 8))
            params = ParamTree({"zp": zp})
            err = grad_check(lambda lv: mcos_loss(lv["zp"], Tensor(f), 0.5), params)
            assert err <= 1e-4

    def test_df_training_loss_gradient_two_frames(self, rng):
        cfg = tiny_dit_config(layers=1, hidden=8, heads=2, latent_dim=3)
        tree = randomized_dit_tree(cfg, seed=5)
        schedule = build_schedule(10)
        z = rng.normal(size=(2, 3))
        key = RngKey(77)
        cond = TextCondition((0, 4))

        def loss(lv):
            return df_training_loss(lv, z, cond, schedule, key, cfg, drop_prob=0.0)

        assert grad_check(loss, tree) <= 1e-4

    def test_nonfinite_loss_names_path(self):
        params = ParamTree({"w": np.array([0.0])})

        def loss(lv):
            return ops.log(lv["w"]).sum()

        with pytest.raises(Exception) as exc:
            grad_check(loss, params)
        assert "loss" in str(exc.value) or "w" in str(exc.value)

    def test_eps_validated(self, rng):
        params = ParamTree({"p": rng.normal(size=(2,))})
        with pytest.raises(ConfigError):
            grad_check(lambda lv: (lv["p"] * lv["p"]).sum(), params, eps=0.5)
