import math

import numpy as np
import pytest

from dlo_r2s2r.rkhs import (HORIZON, RffParams, embed_trajectory,
                            feature_map, mean_embed, median_heuristic,
                            rbf_kernel, rff_gradients)
from tests.conftest import make_record


class TestFeatureMap:
    def test_single_zero_frequency(self):
        rff = RffParams(np.zeros((1, 2)), np.zeros(1), 1.0)
        assert feature_map(np.zeros(2), rff)[0] == pytest.approx(math.sqrt(2))

    def test_kernel_estimate_monte_carlo(self):
        rng = np.random.default_rng(0)
        rff = RffParams.draw(500, 1.0, rng)
        x, y = np.zeros(2), np.array([0.5, 0.0])
        est = float(feature_map(x, rff) @ feature_map(y, rff))
        assert abs(est - math.exp(-0.125)) < 0.1

    def test_self_kernel_near_one(self):
        rng = np.random.default_rng(1)
        rff = RffParams.draw(2000, 1.0, rng)
        x = np.array([0.3, -0.7])
        est = float(feature_map(x, rff) @ feature_map(x, rff))
        assert abs(est - 1.0) < 0.1

    def test_invalid_sigma_rejected(self):
        with pytest.raises(ValueError):
            RffParams.draw(10, 0.0, np.random.default_rng(0))

    def test_json_roundtrip(self):
        rff = RffParams.draw(8, 0.5, np.random.default_rng(2))
        back = RffParams.from_json_dict(rff.to_json_dict())
        assert np.array_equal(back.omega, rff.omega)
        assert np.array_equal(back.b, rff.b)
        assert back.sigma == rff.sigma


class TestMeanEmbed:
    def test_single_point_equals_feature_map(self, rng):
        rff = RffParams.draw(16, 0.5, rng)
        x = rng.uniform(-1, 1, 2)
        assert np.allclose(mean_embed(x[None], rff), feature_map(x, rff))

    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(3)
        rff = RffParams.draw(32, 0.5, rng)
        pts = rng.uniform(-1, 1, (5, 2))
        base = mean_embed(pts, rff)
        for _ in range(100):
            perm = rng.permutation(5)
            emb = mean_embed(pts[perm], rff)
            assert np.max(np.abs(emb - base)) <= 1e-12

    def test_duplicated_points_idempotent(self, rng):
        rff = RffParams.draw(16, 0.5, rng)
        pts = rng.uniform(-1, 1, (3, 2))
        doubled = np.vstack([pts, pts])
        assert np.allclose(mean_embed(doubled, rff), mean_embed(pts, rff),
                           atol=1e-14)

    def test_empty_set_rejected(self, rng):
        rff = RffParams.draw(16, 0.5, rng)
        with pytest.raises(ValueError):
            mean_embed(np.zeros((0, 2)), rff)


class TestEmbedTrajectory:
    def test_output_dimension(self):
        rff = RffParams.draw(500, 0.5, np.random.default_rng(0))
        rec = make_record(16)
        assert embed_trajectory(rec, rff).shape == (8032,)
        assert embed_trajectory(rec, rff, include_actions=False).shape \
            == (16 * 500,)

    def test_short_episode_zero_padded(self):
        rff = RffParams.draw(8, 0.5, np.random.default_rng(0))
        vec = embed_trajectory(make_record(10), rff)
        width = 8 + 2
        assert np.all(vec[10 * width:] == 0.0)
        assert np.any(vec[:10 * width] != 0.0)

    def test_dlo_keypoint_permutation_invariance(self):
        rng = np.random.default_rng(4)
        rff = RffParams.draw(16, 0.5, rng)
        rec = make_record(16, rng)
        base = embed_trajectory(rec, rff)
        for step in rec.steps:
            perm = rng.permutation(4)
            kps = step.obs[2:10].reshape(4, 2)
            step.obs[2:10] = kps[perm].ravel()
        assert np.max(np.abs(embed_trajectory(rec, rff) - base)) <= 1e-12

    def test_too_long_episode_rejected(self):
        rff = RffParams.draw(8, 0.5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            embed_trajectory(make_record(HORIZON + 1), rff)


class TestGradients:
    def test_finite_difference_oracle(self):
        h = 1e-6
        for seed in range(20):
            rng = np.random.default_rng(seed)
            rff = RffParams.draw(6, 0.7, rng)
            x = rng.uniform(-1, 1, 2)
            up = rng.normal(size=6)

            def loss(omega, b, xx):
                r = RffParams(omega, b, rff.sigma)
                return float(feature_map(xx, r) @ up)

            d_omega, d_b, d_x = rff_gradients(x, rff, up)
            max_rel = 0.0
            for arr, grad, which in ((rff.omega, d_omega, "omega"),
                                     (rff.b, d_b, "b"), (x, d_x, "x")):
                flat, gflat = arr.ravel(), np.asarray(grad).ravel()
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    lp = loss(rff.omega, rff.b, x)
                    flat[j] = orig - h
                    lm = loss(rff.omega, rff.b, x)
                    flat[j] = orig
                    fd = (lp - lm) / (2 * h)
                    denom = max(abs(fd), abs(gflat[j]), 1e-6)
                    max_rel = max(max_rel, abs(fd - gflat[j]) / denom)
            assert max_rel < 1e-5

    def test_phase_gradient_at_half_pi(self):
        rff = RffParams(np.zeros((1, 2)), np.array([math.pi / 2]), 1.0)
        _, d_b, _ = rff_gradients(np.zeros(2), rff, np.ones(1))
        assert d_b[0] == pytest.approx(-math.sqrt(2.0), rel=1e-12)

    def test_zero_input_zero_frequency_gradient(self, rng):
        rff = RffParams.draw(4, 1.0, rng)
        d_omega, _, _ = rff_gradients(np.zeros(2), rff, np.ones(4))
        assert np.allclose(d_omega, 0.0)


class TestMedianHeuristic:
    def test_positive_and_scale(self, rng):
        pts = rng.uniform(-1, 1, (100, 2))
        sigma = median_heuristic(pts)
        assert 0.1 < sigma < 3.0

    def test_degenerate_points_floored(self):
        sigma = median_heuristic(np.zeros((10, 2)))
        assert sigma == pytest.approx(1e-3)


class TestRbfKernel:
    def test_known_value(self):
        assert rbf_kernel(np.zeros(2), np.array([0.5, 0.0]), 1.0) \
            == pytest.approx(math.exp(-0.125))

    def test_identity(self):
        assert rbf_kernel(np.ones(2), np.ones(2), 0.3) == 1.0
