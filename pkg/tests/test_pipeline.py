from __future__ import annotations

from dataclasses import replace
from time import perf_counter

import numpy as np
import pytest

from src.config import PipelineConfig
from src.errors import CameraError, ConfigError, ValidationError
from src.features.weights import init_weights
from src.losses.metrics import segmentation_metrics
from src.pipeline.feed_forward import forward, forward_with_intermediates, latency_benchmark, render_novel, timed_render


def _inputs(room, views=(0, 2)):
    return np.stack([room.images[i] for i in views]), [room.cameras[i] for i in views]


def test_held_out_render_of_scene_gaussians(room):
    maps = render_novel(room.gaussians, room.cameras[room.held_out])
    metrics = segmentation_metrics(room.labels[room.held_out], maps.labels, room.num_classes)
    assert metrics.miou >= 0.95
    assert metrics.acc >= 0.97


def test_self_render_reproduces_images(room):
    for i in (0, room.held_out):
        maps = render_novel(room.gaussians, room.cameras[i])
        np.testing.assert_array_equal(maps.rgb, room.images[i])


def test_forward_small_config(room, tiny_config):
    images, cams = _inputs(room)
    config = replace(tiny_config, num_classes=room.num_classes)
    out = forward_with_intermediates(images, cams, config)
    g = out.gaussians.validate()
    assert len(g) == 2 * 64 * 64
    assert g.num_classes == room.num_classes
    assert g.color_view().positions is g.semantic_view().positions
    assert set(out.timings) == {"backbone", "depth", "decode"}
    assert len(out.depths) == 2
    for result in out.depths:
        depth = result.depth_map()
        assert depth.min() >= config.near and depth.max() <= config.far


def test_forward_is_deterministic(room, tiny_config):
    images, cams = _inputs(room)
    config = replace(tiny_config, num_classes=room.num_classes)
    a = forward(images, cams, config)
    b = forward(images, cams, config, init_weights(config.seed, config))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.class_logits, b.class_logits)
    np.testing.assert_array_equal(a.sh_coeffs, b.sh_coeffs)


def test_single_view_is_rejected(room, tiny_config):
    images, cams = _inputs(room, views=(0,))
    with pytest.raises(ValidationError):
        forward(images, cams, replace(tiny_config, num_classes=room.num_classes))


def test_camera_image_mismatch(room, tiny_config):
    images, cams = _inputs(room)
    with pytest.raises(CameraError):
        forward(images, [cams[0], cams[1].resized(32, 32)], replace(tiny_config, num_classes=room.num_classes))
    with pytest.raises(ValidationError):
        forward(images, cams[:1] * 3, replace(tiny_config, num_classes=room.num_classes))


def test_weights_must_match_config(room, tiny_config):
    images, cams = _inputs(room)
    config = replace(tiny_config, num_classes=room.num_classes)
    with pytest.raises(ConfigError):
        forward(images, cams, config, init_weights(0, replace(config, d=24)))


def test_feature_resolution_decoding(room, tiny_config):
    images, cams = _inputs(room)
    config = replace(tiny_config, num_classes=room.num_classes, decode_at="features")
    assert len(forward(images, cams, config)) == 2 * 16 * 16


def test_timed_render(room, tiny_config):
    images, cams = _inputs(room)
    config = replace(tiny_config, num_classes=room.num_classes)
    maps, timings = timed_render(images, cams, room.cameras[1], config)
    assert maps.rgb.shape == (3, 64, 64)
    assert timings["total"] >= timings["render"] > 0


@pytest.mark.slow
def test_default_forward_and_render_budget(room):
    images, cams = _inputs(room)
    config = PipelineConfig(num_candidates=32, num_classes=room.num_classes)
    gaussians = forward(images, cams, config)
    assert len(gaussians) == 8192
    assert gaussians.color_view().positions is gaussians.semantic_view().positions
    np.testing.assert_array_equal(forward(images, cams, config).positions, gaussians.positions)
    start = perf_counter()
    maps = render_novel(gaussians, room.cameras[room.held_out], config)
    assert perf_counter() - start < 5.0
    assert maps.labels.shape == (64, 64)


@pytest.mark.slow
def test_latency_benchmark_stages():
    timings = latency_benchmark(num_candidates=8)
    assert set(timings) == {"backbone", "depth", "decode", "render", "total"}
    assert all(v >= 0 for v in timings.values())
