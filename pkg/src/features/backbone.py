"""Dual-branch multi-view feature extraction.

A shared residual CNN downsamples every view by 4. The color branch feeds
those features straight into a camera-aware transformer; the semantic
branch refines them with two more residual blocks first.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.config import PipelineConfig
from src.errors import EmptyInputError, NonFiniteError, ShapeError
from src.features.attention import ViewTransforms
from src.features.weights import NetworkWeights
from src.geometry.cameras import CameraView

LOG = logging.getLogger("semsplat.backbone")

DOWNSAMPLE = 4


@dataclass(frozen=True)
class FeatureMaps:
    color: torch.Tensor
    semantic: torch.Tensor
    pad: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.color.shape != self.semantic.shape:
            raise ShapeError(f"Branch shapes differ: {tuple(self.color.shape)} vs {tuple(self.semantic.shape)}")
        if not (torch.isfinite(self.color).all() and torch.isfinite(self.semantic).all()):
            raise NonFiniteError("Feature maps contain non-finite values")


def as_image_tensor(images, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images, dtype=dtype)
    if t.dim() != 4 or t.shape[1] != 3:
        raise ShapeError(f"Images must be N x 3 x H x W, got {tuple(t.shape)}")
    if t.shape[0] == 0:
        raise EmptyInputError("Empty image set")
    return t


def pad_to_multiple(images: torch.Tensor, multiple: int = DOWNSAMPLE) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = images.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        images = F.pad(images, (0, pw, 0, ph), mode="replicate")
    return images, (ph, pw)


def residual_block(x: torch.Tensor, weights: NetworkWeights, name: str) -> torch.Tensor:
    return weights.call(name, x)


def shared_cnn(images, weights: NetworkWeights, prefix: str = "cnn") -> torch.Tensor:
    """N x 3 x H x W images -> N x d x ceil(H/4) x ceil(W/4) features."""
    x = as_image_tensor(images, weights.dtype)
    x, _ = pad_to_multiple(x)
    return weights.call(prefix, x)


def _effective_window(config: PipelineConfig, h: int, w: int) -> int:
    if not config.swin:
        return max(h, w)
    window = min(config.window_size, h, w)
    if window != config.window_size:
        LOG.warning("window clamped from %d to %d for a %dx%d token grid", config.window_size, window, h, w)
    return window


def transformer_stack(
    features: torch.Tensor,
    transforms: ViewTransforms,
    weights: NetworkWeights,
    prefix: str,
    config: PipelineConfig,
    trace: list | None = None,
) -> torch.Tensor:
    """Run the transformer blocks stored under ``prefix``.

    When ``trace`` is a list, each block appends its (self, cross)
    attention weights to it.
    """
    _, _, h, w = features.shape
    window = _effective_window(config, h, w)
    return weights.call(prefix, features, transforms, window, config.swin, config.heads, trace)


def view_transforms(cameras: Sequence[CameraView], config: PipelineConfig, dtype: torch.dtype) -> ViewTransforms:
    return ViewTransforms.from_cameras(
        cameras, dtype=dtype, base=config.rope_base, camera_injection=config.camera_injection
    )


def _check_views(low: torch.Tensor, cameras: Sequence[CameraView]) -> None:
    if low.shape[0] != len(cameras):
        raise ShapeError(f"{low.shape[0]} feature maps for {len(cameras)} cameras")


def color_branch(
    low: torch.Tensor,
    cameras: Sequence[CameraView],
    weights: NetworkWeights,
    config: PipelineConfig | None = None,
    trace: list | None = None,
) -> torch.Tensor:
    config = config or PipelineConfig()
    _check_views(low, cameras)
    tf = view_transforms(cameras, config, low.dtype)
    return transformer_stack(low, tf, weights, "color", config, trace)


def semantic_branch(
    low: torch.Tensor,
    cameras: Sequence[CameraView],
    weights: NetworkWeights,
    config: PipelineConfig | None = None,
    trace: list | None = None,
) -> torch.Tensor:
    config = config or PipelineConfig()
    _check_views(low, cameras)
    x = weights.call("sem_cnn", low)
    tf = view_transforms(cameras, config, low.dtype)
    return transformer_stack(x, tf, weights, "semantic", config, trace)


def extract_features(
    images,
    cameras: Sequence[CameraView],
    weights: NetworkWeights,
    config: PipelineConfig | None = None,
) -> FeatureMaps:
    config = config or PipelineConfig()
    x = as_image_tensor(images, weights.dtype)
    if x.shape[0] != len(cameras):
        raise ShapeError(f"{x.shape[0]} images for {len(cameras)} cameras")
    _, pad = pad_to_multiple(x)
    low = shared_cnn(x, weights, "cnn")
    sem_low = low if config.shared_cnn else shared_cnn(x, weights, "sem_lowcnn")
    LOG.debug("low-level features %s (pad=%s)", tuple(low.shape), pad)
    return FeatureMaps(
        color=color_branch(low, cameras, weights, config),
        semantic=semantic_branch(sem_low, cameras, weights, config),
        pad=pad,
    )
