"""Single feed-forward pass: images + cameras -> dual Gaussians -> novel views."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from time import perf_counter
from typing import Sequence

import numpy as np
import torch

from src.config import PipelineConfig
from src.depth.plane_sweep import DepthCandidates, DepthResult, estimate_depths, sample_candidates
from src.errors import CameraError, ValidationError
from src.features.backbone import FeatureMaps, as_image_tensor, extract_features
from src.features.weights import NetworkWeights, check_layout, init_weights
from src.gaussians.decoder import decode_gaussians
from src.gaussians.model import GaussianSet
from src.geometry.cameras import CameraView
from src.rendering.rasterizer import RenderedMaps, rasterize
from src.synth.scenes import generate_room

LOG = logging.getLogger("semsplat.pipeline")


@dataclass(frozen=True, eq=False)
class ForwardOutputs:
    gaussians: GaussianSet
    features: FeatureMaps
    depths: list[DepthResult]
    candidates: DepthCandidates
    timings: dict[str, float] = field(default_factory=dict)


def _check_inputs(images, cameras: Sequence[CameraView], dtype: torch.dtype) -> torch.Tensor:
    x = as_image_tensor(images, dtype)
    if x.shape[0] != len(cameras):
        raise ValidationError(f"{x.shape[0]} images for {len(cameras)} cameras")
    if x.shape[0] < 2:
        raise ValidationError("The feed-forward pass needs at least 2 input views")
    h, w = x.shape[-2:]
    for i, cam in enumerate(cameras):
        if (cam.height, cam.width) != (h, w):
            raise CameraError(f"Camera {i} is {cam.width}x{cam.height}, images are {w}x{h}")
    return x


def forward_with_intermediates(
    images,
    cameras: Sequence[CameraView],
    config: PipelineConfig | None = None,
    weights: NetworkWeights | None = None,
) -> ForwardOutputs:
    """Backbone, per-view depth and decoding; keeps every stage's output."""
    config = (config or PipelineConfig()).validate()
    weights = weights if weights is not None else init_weights(config.seed, config)
    check_layout(weights, config)
    x = _check_inputs(images, cameras, weights.dtype)
    timings = {}

    t0 = perf_counter()
    features = extract_features(x, cameras, weights, config)
    t1 = perf_counter()
    candidates = sample_candidates(config.near, config.far, config.num_candidates)
    depths = estimate_depths(features.color, cameras, candidates, weights)
    t2 = perf_counter()
    gaussians = decode_gaussians(x, features, depths, cameras, weights, config)
    t3 = perf_counter()
    timings.update(backbone=t1 - t0, depth=t2 - t1, decode=t3 - t2)
    LOG.info(
        "forward: %d views -> %d Gaussians (backbone %.2fs, depth %.2fs, decode %.2fs)",
        len(cameras), len(gaussians), *timings.values(),
    )
    return ForwardOutputs(gaussians, features, depths, candidates, timings)


def forward(
    images,
    cameras: Sequence[CameraView],
    config: PipelineConfig | None = None,
    weights: NetworkWeights | None = None,
) -> GaussianSet:
    return forward_with_intermediates(images, cameras, config, weights).gaussians


def render_novel(
    gaussians: GaussianSet,
    camera: CameraView,
    config: PipelineConfig | None = None,
    threads: int | None = None,
) -> RenderedMaps:
    config = config or PipelineConfig()
    maps, _ = rasterize(gaussians, camera, config=config.raster, threads=threads)
    return maps


def timed_render(
    images,
    cameras: Sequence[CameraView],
    target: CameraView,
    config: PipelineConfig | None = None,
    weights: NetworkWeights | None = None,
) -> tuple[RenderedMaps, dict[str, float]]:
    """forward + render_novel with per-stage wall-clock seconds."""
    start = perf_counter()
    out = forward_with_intermediates(images, cameras, config, weights)
    t = perf_counter()
    maps = render_novel(out.gaussians, target, config)
    timings = dict(out.timings, render=perf_counter() - t, total=perf_counter() - start)
    return maps, timings


def latency_benchmark(seed: int = 0, resolution: int = 64, num_candidates: int = 32) -> dict[str, float]:
    """Timings of a two-view pass on a synthetic room."""
    scene = generate_room(seed, resolution=resolution, n_cameras=3)
    config = PipelineConfig(num_candidates=num_candidates, num_classes=scene.num_classes, seed=seed)
    inputs = [0, 2]
    images = np.stack([scene.images[i] for i in inputs])
    _, timings = timed_render(images, [scene.cameras[i] for i in inputs], scene.cameras[1], config)
    return timings
