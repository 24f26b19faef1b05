"""Decoder heads turning depth and features into per-pixel dual Gaussians."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.config import PipelineConfig
from src.depth.plane_sweep import DepthResult
from src.errors import ShapeError
from src.features.backbone import DOWNSAMPLE, FeatureMaps, as_image_tensor, pad_to_multiple
from src.features.weights import NetworkWeights
from src.gaussians.model import GaussianSet
from src.gaussians.sh import rgb_to_dc
from src.geometry.cameras import CameraView, back_project_many, pixel_centers
from src.geometry.rotations import normalize_quaternions

LOG = logging.getLogger("semsplat.decoder")

SCALE_FLOOR = 1e-4
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True, eq=False)
class SharedAttributes:
    positions: np.ndarray
    opacities: np.ndarray
    depths: np.ndarray
    provenance: np.ndarray


@dataclass(frozen=True, eq=False)
class BranchAttributes:
    payload: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray


def decode_grid(config: PipelineConfig, images: torch.Tensor) -> tuple[int, int]:
    """Spatial size the Gaussians are decoded on."""
    h, w = images.shape[-2:]
    if config.decode_at == "pixels":
        return h, w
    return -(-h // DOWNSAMPLE), -(-w // DOWNSAMPLE)


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float64)


def _flatten_pixels(t: torch.Tensor) -> torch.Tensor:
    """(N, C, H, W) -> (N*H*W, C) in view-major, row-major order."""
    return t.permute(0, 2, 3, 1).reshape(-1, t.shape[1])


def _provenance(n: int, h: int, w: int) -> np.ndarray:
    views, rows, cols = np.meshgrid(np.arange(n), np.arange(h), np.arange(w), indexing="ij")
    return np.stack([views.reshape(-1), rows.reshape(-1), cols.reshape(-1)], axis=1)


def decode_shared(
    depth_results: Sequence[DepthResult],
    cameras: Sequence[CameraView],
    weights: NetworkWeights,
    size: tuple[int, int],
) -> SharedAttributes:
    """Back-projected centers and opacities for every pixel of an (H, W) grid.

    Depth probabilities are resampled bilinearly to the grid and the depth
    is taken as their expectation there.
    """
    if len(depth_results) != len(cameras):
        raise ShapeError(f"{len(depth_results)} depth results for {len(cameras)} cameras")
    h, w = size
    centers = pixel_centers(w, h)
    positions, opacities, depths = [], [], []
    for result, cam in zip(depth_results, cameras):
        probs = result.probs.to(weights.dtype).unsqueeze(0)
        fh, fw = probs.shape[-2:]
        if (fh, fw) != (h, w):
            # features cover the padded image; resample to it, then crop
            probs = F.interpolate(probs, size=(fh * DOWNSAMPLE, fw * DOWNSAMPLE), mode="bilinear", align_corners=False)
            probs = probs[..., :h, :w]
        values = torch.as_tensor(result.candidates.values, dtype=probs.dtype)
        depth = (probs[0] * values[:, None, None]).sum(dim=0)
        depth = depth.clamp(float(values[0]), float(values[-1]))
        alpha = weights.call("opacity", probs)[0, 0]
        d = _to_numpy(depth)
        positions.append(back_project_many(centers, d.reshape(-1), cam.resized(w, h)))
        opacities.append(_to_numpy(alpha).reshape(-1))
        depths.append(d)
    return SharedAttributes(
        positions=np.concatenate(positions),
        opacities=np.concatenate(opacities),
        depths=np.stack(depths),
        provenance=_provenance(len(cameras), h, w),
    )


def _head_inputs(images, features: torch.Tensor, size: tuple[int, int], dtype: torch.dtype):
    x = as_image_tensor(images, dtype)
    h, w = size
    padded, _ = pad_to_multiple(x)
    fh, fw = features.shape[-2:]
    if (h, w) == tuple(x.shape[-2:]):
        feats = F.interpolate(features.to(dtype), size=(fh * DOWNSAMPLE, fw * DOWNSAMPLE), mode="bilinear", align_corners=False)
        feats = feats[..., :h, :w]
        rgb = x
    else:
        feats = features.to(dtype)
        rgb = F.avg_pool2d(padded, DOWNSAMPLE)
    return rgb, torch.cat([rgb, feats], dim=1)


def _scales_and_rotations(raw_scale: torch.Tensor, raw_quat: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    scales = _to_numpy(F.softplus(raw_scale)) + SCALE_FLOOR
    rotations = normalize_quaternions(_to_numpy(raw_quat) + IDENTITY_QUAT)
    return scales, rotations


def decode_color_attrs(
    images,
    color_features: torch.Tensor,
    weights: NetworkWeights,
    config: PipelineConfig,
    size: tuple[int, int],
) -> BranchAttributes:
    """SH coefficients (G, 3, B), scales and rotations from the color head.

    The DC band is offset by the pixel color so a zero head reproduces it.
    """
    rgb, x = _head_inputs(images, color_features, size, weights.dtype)
    raw = _flatten_pixels(weights.call("color_head", x))
    b = config.sh_coeffs
    sh = _to_numpy(raw[:, : 3 * b]).reshape(-1, 3, b)
    sh[:, :, 0] += rgb_to_dc(_to_numpy(_flatten_pixels(rgb)))
    scales, rotations = _scales_and_rotations(raw[:, 3 * b : 3 * b + 3], raw[:, 3 * b + 3 :])
    return BranchAttributes(sh, scales, rotations)


def decode_semantic_attrs(
    images,
    semantic_features: torch.Tensor,
    weights: NetworkWeights,
    config: PipelineConfig,
    size: tuple[int, int],
) -> BranchAttributes:
    _, x = _head_inputs(images, semantic_features, size, weights.dtype)
    raw = _flatten_pixels(weights.call("semantic_head", x))
    k = config.num_classes
    scales, rotations = _scales_and_rotations(raw[:, k : k + 3], raw[:, k + 3 :])
    return BranchAttributes(_to_numpy(raw[:, :k]), scales, rotations)


def decode_gaussians(
    images,
    features: FeatureMaps,
    depth_results: Sequence[DepthResult],
    cameras: Sequence[CameraView],
    weights: NetworkWeights,
    config: PipelineConfig,
) -> GaussianSet:
    x = as_image_tensor(images, weights.dtype)
    size = decode_grid(config, x)
    shared = decode_shared(depth_results, cameras, weights, size)
    color = decode_color_attrs(x, features.color, weights, config, size)
    semantic = decode_semantic_attrs(x, features.semantic, weights, config, size)
    gaussians = GaussianSet(
        positions=shared.positions,
        opacities=shared.opacities,
        color_scales=color.scales,
        color_rotations=color.rotations,
        sh_coeffs=color.payload,
        sem_scales=semantic.scales,
        sem_rotations=semantic.rotations,
        class_logits=semantic.payload,
        provenance=shared.provenance,
    )
    LOG.info("decoded %d dual Gaussians on a %dx%d grid per view", len(gaussians), size[1], size[0])
    return gaussians
