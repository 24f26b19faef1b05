"""Plane-induced warping of source feature maps into a reference view."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import ShapeError, ValidationError
from src.geometry.cameras import MIN_DEPTH, CameraView, build_projective, relative_transform


def sampling_grid(
    cam_ref: CameraView,
    cam_src: CameraView,
    depths: Sequence[float] | np.ndarray,
    height: int,
    width: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized source coordinates for every reference pixel and depth.

    Returns (grid (L, H, W, 2) in grid_sample's [-1, 1] convention, valid
    mask (L, H, W) false where the point falls behind the source camera).
    """
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if depths.size == 0 or np.any(depths <= 0):
        raise ValidationError("Warp depths must be positive")
    rel = relative_transform(build_projective(cam_src), build_projective(cam_ref)).m

    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    xn, yn = np.meshgrid(xs, ys)
    # homogeneous reference coordinates (x*d, y*d, d, 1)
    base = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    pts = base[None] * depths[:, None, None, None]
    src = pts @ rel[:3, :3].T + rel[:3, 3]
    z = src[..., 2]
    valid = z > MIN_DEPTH
    safe_z = np.where(valid, z, 1.0)
    gx = 2.0 * src[..., 0] / safe_z - 1.0
    gy = 2.0 * src[..., 1] / safe_z - 1.0
    grid = np.stack([gx, gy], axis=-1)
    # push invalid samples far outside so zero padding applies
    grid[~valid] = -4.0
    return grid, valid


def warp_features(
    source: torch.Tensor,
    cam_ref: CameraView,
    cam_src: CameraView,
    depths: Sequence[float] | np.ndarray,
) -> torch.Tensor:
    """Warp a C x H' x W' source map into the reference view at each depth.

    Returns an L x C x H' x W' tensor. Out-of-image and behind-camera
    samples are zero. Differentiable with respect to ``source``.
    """
    if source.dim() != 3:
        raise ShapeError(f"Expected a C x H x W feature map, got shape {tuple(source.shape)}")
    c, h, w = source.shape
    grid, valid = sampling_grid(cam_ref, cam_src, depths, h, w)
    grid_t = torch.as_tensor(grid, dtype=source.dtype, device=source.device)
    mask = torch.as_tensor(valid, dtype=source.dtype, device=source.device)
    n = grid_t.shape[0]
    warped = F.grid_sample(
        source.unsqueeze(0).expand(n, c, h, w),
        grid_t,
        mode="bilinear",
        padding_mode="zeros",
        align_corners=False,
    )
    return warped * mask[:, None]


def warp_feature(source: torch.Tensor, cam_ref: CameraView, cam_src: CameraView, depth: float) -> torch.Tensor:
    if not depth > 0:
        raise ValidationError(f"Depth must be positive, got {depth}")
    return warp_features(source, cam_ref, cam_src, [depth])[0]
