from __future__ import annotations

import numpy as np
import pytest
import torch

from src.depth.plane_sweep import (
    CostVolume,
    DepthCandidates,
    build_cost_volume,
    estimate_depths,
    estimate_depths_raw,
    raw_photometric_features,
    refine_volume,
    regress_depth,
    sample_candidates,
)
from src.errors import NonFiniteError, ValidationError
from src.features.weights import init_weights
from src.geometry.rotations import random_rotation
from src.synth.scenes import textured_plane_pair
from tests.helpers import random_camera


class TestCandidates:
    def test_inverse_depth_spacing(self):
        np.testing.assert_allclose(sample_candidates(1.0, 4.0, 3).values, [1.0, 1.6, 4.0], rtol=1e-12)

    def test_degenerate_range(self):
        with pytest.raises(ValidationError):
            sample_candidates(1.0, 1.0, 4)
        with pytest.raises(ValidationError):
            sample_candidates(2.0, 1.0, 4)
        with pytest.raises(ValidationError):
            sample_candidates(1.0, 2.0, 1)

    def test_bounds_and_order(self):
        c = sample_candidates(0.5, 15.0, 128)
        assert len(c) == 128
        assert c.values[0] == 0.5 and c.values[-1] == 15.0
        assert np.all(np.diff(c.values) > 0)


class TestRegression:
    def test_delta_distribution(self):
        cands = sample_candidates(1.0, 4.0, 5)
        logits = torch.zeros(5, 2, 2, dtype=torch.float64)
        logits[3] = 1e4
        np.testing.assert_allclose(regress_depth(logits, cands).depth_map(), cands.values[3], rtol=1e-12)

    def test_uniform_expectation(self):
        cands = DepthCandidates(np.array([1.0, 2.0, 4.0]), 1.0, 4.0)
        result = regress_depth(torch.zeros(3, 4, 4, dtype=torch.float64), cands)
        np.testing.assert_allclose(result.depth_map(), 7.0 / 3.0, rtol=1e-12)
        np.testing.assert_allclose(result.prob_map().sum(axis=0), 1.0, atol=1e-12)

    def test_convex_combination(self, rng):
        cands = sample_candidates(0.5, 8.0, 16)
        result = regress_depth(torch.as_tensor(rng.normal(scale=5.0, size=(16, 6, 6))), cands)
        depth = result.depth_map()
        assert depth.min() >= 0.5 and depth.max() <= 8.0

    def test_non_finite(self):
        logits = torch.zeros(3, 2, 2)
        logits[0, 0, 0] = float("nan")
        with pytest.raises(NonFiniteError):
            regress_depth(logits, sample_candidates(1.0, 4.0, 3))


class TestCostVolume:
    def test_identical_views(self, rng):
        cam = random_camera(rng, 8, 8)
        feats = torch.as_tensor(rng.normal(size=(1, 4, 8, 8)))
        features = torch.cat([feats, feats])
        volume = build_cost_volume(features, [cam, cam], sample_candidates(1.0, 5.0, 6), 0)
        expected = (feats[0] ** 2).mean(dim=0)
        for m in range(6):
            torch.testing.assert_close(volume.corr[m, 1:-1, 1:-1], expected[1:-1, 1:-1], rtol=0, atol=1e-9)

    def test_zero_sources(self, rng):
        cams = [random_camera(rng, 8, 8) for _ in range(3)]
        features = torch.zeros(3, 4, 8, 8, dtype=torch.float64)
        features[0] = torch.as_tensor(rng.normal(size=(4, 8, 8)))
        volume = build_cost_volume(features, cams, sample_candidates(1.0, 5.0, 4), 0)
        assert torch.count_nonzero(volume.corr) == 0

    def test_single_view_rejected(self, rng):
        with pytest.raises(ValidationError):
            build_cost_volume(torch.zeros(1, 4, 8, 8), [random_camera(rng, 8, 8)], sample_candidates(1.0, 2.0, 2), 0)

    def test_invariant_to_world_rebasing(self, rng):
        cams = [random_camera(rng, 12, 12) for _ in range(2)]
        rw, tw = random_rotation(rng), rng.normal(size=3)
        features = torch.as_tensor(rng.normal(size=(2, 4, 12, 12)))
        cands = sample_candidates(1.0, 6.0, 8)
        before = build_cost_volume(features, cams, cands, 0).corr
        after = build_cost_volume(features, [c.rebased(rw, tw) for c in cams], cands, 0).corr
        torch.testing.assert_close(after, before, rtol=0, atol=1e-6)

    def test_plane_argmax_selects_true_candidate(self):
        pair = textured_plane_pair(3.0, 0.3, resolution=64)
        cands = sample_candidates(2.0, 6.0, 33)
        feats = raw_photometric_features(pair.images)
        corr = build_cost_volume(feats, pair.cameras, cands, 0).corr[:, 8:-8, 12:-12]
        best = torch.argmax(corr, dim=0).numpy()
        assert np.mean(best == cands.nearest_index(3.0)) >= 0.95


class TestRefinement:
    def test_shape_and_bypass(self, rng, tiny_config):
        w = init_weights(0, tiny_config, torch.float64)
        corr = torch.as_tensor(rng.normal(size=(tiny_config.num_candidates, 4, 4)))
        feats = torch.as_tensor(rng.normal(size=(tiny_config.d, 4, 4)))
        volume = CostVolume(corr, 0)
        assert refine_volume(volume, feats, w).shape == corr.shape
        bypass = w.zeroed("depth.head2")
        torch.testing.assert_close(refine_volume(volume, feats, bypass), corr, rtol=0, atol=0)

    def test_gradient_matches_finite_difference(self, rng, tiny_config):
        w = init_weights(0, tiny_config, torch.float64)
        volume = CostVolume(torch.as_tensor(rng.normal(size=(tiny_config.num_candidates, 4, 4))), 0)
        feats = torch.as_tensor(rng.normal(size=(tiny_config.d, 4, 4)))
        name, index = "depth.enc1.weight", (0, 3, 1, 1)
        param = w[name].clone().requires_grad_(True)
        refine_volume(volume, feats, w.with_tensor(name, param)).sum().backward()

        def bumped_sum(delta: float) -> float:
            bumped = w[name].clone()
            bumped[index] += delta
            return refine_volume(volume, feats, w.with_tensor(name, bumped)).sum().item()

        numeric = (bumped_sum(1e-5) - bumped_sum(-1e-5)) / 2e-5
        assert param.grad[index].item() == pytest.approx(numeric, rel=1e-3, abs=1e-6)

    def test_learned_path_bounds(self, rng, tiny_config):
        w = init_weights(0, tiny_config, torch.float64)
        cams = [random_camera(rng, 4, 4) for _ in range(2)]
        features = torch.as_tensor(rng.normal(size=(2, tiny_config.d, 4, 4)))
        cands = sample_candidates(tiny_config.near, tiny_config.far, tiny_config.num_candidates)
        for result in estimate_depths(features, cams, cands, w):
            depth = result.depth_map()
            assert depth.shape == (4, 4)
            assert depth.min() >= tiny_config.near and depth.max() <= tiny_config.far
            np.testing.assert_allclose(result.prob_map().sum(axis=0), 1.0, atol=1e-6)


def test_raw_plane_sweep_recovers_plane_depth():
    pair = textured_plane_pair(3.0, 0.3, resolution=64)
    results = estimate_depths_raw(pair.images, pair.cameras, sample_candidates(2.0, 5.0, 64))
    depth = results[0].depth_map()[8:-8, 12:-12]
    rel = np.abs(depth - 3.0) / 3.0
    assert np.mean(rel <= 0.02) >= 0.9


def test_raw_features_have_unit_cosine_scale(rng):
    feats = raw_photometric_features(rng.uniform(size=(1, 3, 8, 8)))
    assert feats.shape == (1, 27, 8, 8)
    np.testing.assert_allclose((feats**2).mean(dim=1).numpy(), 1.0, atol=1e-9)
