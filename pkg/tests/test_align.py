"""Alignment losses, adaptive weighting, and the semantic-feature oracle."""
import numpy as np
import pytest

from causalmotion.align import (
    AlignConfig,
    adaptive_lambda,
    mcos_loss,
    mdms_loss,
    project_latents,
    semantic_oracle,
)
from causalmotion.data import ToyCaption, generate_trajectory
from causalmotion.nn import ParamTree, grad_check
from causalmotion.nn.tensor import Tensor


class TestProjection:
    def test_identity(self, rng):
        z = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(project_latents(Tensor(z), Tensor(np.eye(4))).data, z)

    def test_zero(self, rng):
        z = rng.normal(size=(5, 4))
        assert np.all(project_latents(Tensor(z), Tensor(np.zeros((6, 4)))).data == 0)

    def test_matches_matmul_oracle(self, rng):
        z = rng.normal(size=(5, 4))
        w = rng.normal(size=(7, 4))
        expect = np.stack([w @ row for row in z])
        np.testing.assert_allclose(project_latents(Tensor(z), Tensor(w)).data, expect, atol=1e-10)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ValueError):
            project_latents(Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(7, 3))))


class TestMcos:
    def test_identical_rows_zero(self, rng):
        z = rng.normal(size=(4, 8))
        assert mcos_loss(Tensor(z), Tensor(z * 2.0), 0.5).item() == 0.0

    def test_orthogonal_rows(self):
        zp = np.array([[1.0, 0.0], [0.0, 1.0]])
        f = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert abs(mcos_loss(Tensor(zp), Tensor(f), 0.5).item() - 0.5) < 1e-12

    def test_antiparallel_rows(self):
        zp = np.array([[1.0, 0.0]])
        f = -zp
        assert abs(mcos_loss(Tensor(zp), Tensor(f), 0.5).item() - 1.5) < 1e-12

    def test_zero_row_named(self):
        zp = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="row 1"):
            mcos_loss(Tensor(zp), Tensor(np.ones((2, 2))), 0.5)

    def test_scale_invariance(self, rng):
        z = rng.normal(size=(5, 6))
        f = rng.normal(size=(5, 6))
        base = mcos_loss(Tensor(z), Tensor(f), 0.25).item()
        scales = rng.uniform(0.1, 10.0, size=(5, 1))
        scaled = mcos_loss(Tensor(z * scales), Tensor(f), 0.25).item()
        assert abs(base - scaled) < 1e-10


class TestMdms:
    def test_equal_inputs_zero(self, rng):
        z = rng.normal(size=(5, 4))
        assert mdms_loss(Tensor(z), Tensor(z), 0.25).item() == 0.0

    def test_hand_crafted_two_rows(self):
        z = np.array([[1.0, 0.0], [2.0, 0.0]])  # cos(z1, z2) = 1
        f = np.array([[1.0, 0.0], [0.0, 1.0]])  # cos(f1, f2) = 0
        val = mdms_loss(Tensor(z), Tensor(f), 0.25).item()
        assert abs(val - 0.375) < 1e-12

    def test_margin_two_dominates(self, rng):
        z = rng.normal(size=(6, 4))
        f = rng.normal(size=(6, 5))
        assert mdms_loss(Tensor(z), Tensor(f), 2.0).item() == 0.0

    def test_scale_invariance(self, rng):
        z = rng.normal(size=(5, 4))
        f = rng.normal(size=(5, 6))
        base = mdms_loss(Tensor(z), Tensor(f), 0.1).item()
        scaled = mdms_loss(
            Tensor(z * rng.uniform(0.2, 5.0, size=(5, 1))),
            Tensor(f * rng.uniform(0.2, 5.0, size=(5, 1))),
            0.1,
        ).item()
        assert abs(base - scaled) < 1e-10

    def test_nonnegative(self, rng):
        for _ in range(20):
            z = rng.normal(size=(4, 3))
            f = rng.normal(size=(4, 6))
            assert mdms_loss(Tensor(z), Tensor(f), 0.25).item() >= 0.0


class TestAlignGradients:
    def test_mcos_gradient_away_from_kinks(self, rng):
        found = 0
        for attempt in range(20):
            gen = np.random.default_rng(attempt)
            zp = gen.normal(size=(4, 8))
            f = gen.normal(size=(4, 8))
            cos = (zp / np.linalg.norm(zp, axis=1, keepdims=True) *
                   f / np.linalg.norm(f, axis=1, keepdims=True)).sum(axis=1)
            if np.abs(1.0 - 0.5 - cos).min() <= 1e-3:
                continue
            params = ParamTree({"zp": zp})
            assert grad_check(lambda lv: mcos_loss(lv["zp"], Tensor(f), 0.5), params) <= 1e-4
            found += 1
            if found >= 3:
                return
        pytest.fail("not enough kink-free mcos instances")

    def test_mdms_gradient_away_from_kinks(self, rng):
        found = 0
        for attempt in range(30):
            gen = np.random.default_rng(100 + attempt)
            z = gen.normal(size=(4, 5))
            f = gen.normal(size=(4, 6))
            zn = z / np.linalg.norm(z, axis=1, keepdims=True)
            fn = f / np.linalg.norm(f, axis=1, keepdims=True)
            delta = np.abs(zn @ zn.T - fn @ fn.T)
            off = ~np.eye(4, dtype=bool)
            if np.abs(delta[off] - 0.25).min() <= 1e-3 or delta[off].min() <= 1e-3:
                continue
            params = ParamTree({"z": z})
            assert grad_check(lambda lv: mdms_loss(lv["z"], Tensor(f), 0.25), params) <= 1e-4
            found += 1
            if found >= 3:
                return
        pytest.fail("not enough kink-free mdms instances")


class TestAdaptiveLambda:
    def test_equal_norms_near_one(self):
        cfg = AlignConfig()
        assert abs(adaptive_lambda(1.0, 1.0, cfg) - 1.0) < 1e-6

    def test_zero_align_norm_hits_cap(self):
        cfg = AlignConfig(lambda_max=10.0)
        assert adaptive_lambda(5.0, 0.0, cfg) == 10.0

    def test_zero_rec_norm_gives_zero(self):
        assert adaptive_lambda(0.0, 3.0, AlignConfig()) == 0.0

    def test_scale_covariance(self, rng):
        cfg = AlignConfig()
        for _ in range(30):
            r, a = rng.uniform(0.5, 2.0, size=2)
            c = rng.uniform(0.1, 10.0)
            lam1 = adaptive_lambda(r, a, cfg)
            lam2 = adaptive_lambda(c * r, c * a, cfg)
            assert abs(lam1 - lam2) / lam1 < 1e-6


class TestSemanticOracle:
    def test_deterministic(self, rng):
        m = generate_trajectory(ToyCaption("circle", "slow"), 32, 20.0, 0.02, seed=4)
        cond = ToyCaption("circle", "slow").condition()
        a = semantic_oracle(m, cond, seed=9)
        b = semantic_oracle(m, cond, seed=9)
        assert np.array_equal(a, b)

    def test_caption_changes_features(self):
        m = generate_trajectory(ToyCaption("line", "fast"), 32, 20.0, 0.0, seed=4)
        a = semantic_oracle(m, ToyCaption("line", "fast").condition(), seed=9)
        b = semantic_oracle(m, ToyCaption("line", "slow").condition(), seed=9)
        assert np.abs(a - b).max() > 1e-6

    def test_row_count_is_ceil(self, rng):
        for T in (16, 18, 33, 64):
            m = np.zeros((T, 4))
            feats = semantic_oracle(m, ToyCaption("circle", "slow").condition(), seed=1)
            assert feats.shape[0] == -(-T // 4)
