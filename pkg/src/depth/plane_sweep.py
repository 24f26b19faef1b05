"""Plane-sweep cost volumes and depth regression."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import EmptyInputError, NonFiniteError, ShapeError, ValidationError
from src.features.backbone import as_image_tensor
from src.features.weights import NetworkWeights
from src.geometry.cameras import CameraView
from src.geometry.warping import warp_features

LOG = logging.getLogger("semsplat.depth")


@dataclass(frozen=True, eq=False)
class DepthCandidates:
    values: np.ndarray
    near: float
    far: float

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValidationError("Need at least two depth candidates")
        if np.any(np.diff(v) <= 0):
            raise ValidationError("Depth candidates must be strictly increasing")
        if v[0] < self.near or v[-1] > self.far:
            raise ValidationError(f"Candidates [{v[0]}, {v[-1]}] exceed range [{self.near}, {self.far}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def nearest_index(self, depth: float) -> int:
        return int(np.argmin(np.abs(self.values - depth)))


def sample_candidates(near: float, far: float, count: int) -> DepthCandidates:
    """``count`` depths spaced uniformly in inverse depth, increasing."""
    if not 0 < near < far:
        raise ValidationError(f"Need 0 < near < far, got near={near} far={far}")
    if count < 2:
        raise ValidationError(f"Need at least 2 candidates, got {count}")
    inv = np.linspace(1.0 / near, 1.0 / far, count)
    values = 1.0 / inv
    values[0], values[-1] = near, far
    return DepthCandidates(values, float(near), float(far))


@dataclass(frozen=True)
class CostVolume:
    corr: torch.Tensor
    ref_view: int

    def __post_init__(self) -> None:
        if self.corr.dim() != 3:
            raise ShapeError(f"Cost volume must be L x H x W, got {tuple(self.corr.shape)}")
        if not torch.isfinite(self.corr).all():
            raise NonFiniteError("Cost volume has non-finite entries")


@dataclass(frozen=True)
class DepthResult:
    depth: torch.Tensor
    probs: torch.Tensor
    candidates: DepthCandidates

    def depth_map(self) -> np.ndarray:
        return self.depth.detach().cpu().numpy().astype(np.float64)

    def prob_map(self) -> np.ndarray:
        return self.probs.detach().cpu().numpy().astype(np.float64)


def build_cost_volume(
    features: torch.Tensor,
    cameras: Sequence[CameraView],
    candidates: DepthCandidates,
    ref_view: int,
) -> CostVolume:
    """Mean over sources of the channel-mean correlation with warped features."""
    if features.dim() != 4:
        raise ShapeError(f"Features must be N x C x H x W, got {tuple(features.shape)}")
    n = features.shape[0]
    if n != len(cameras):
        raise ShapeError(f"{n} feature maps for {len(cameras)} cameras")
    if n < 2:
        raise ValidationError("A cost volume needs at least one source view")
    if not 0 <= ref_view < n:
        raise ValidationError(f"Reference view {ref_view} out of range for {n} views")
    ref = features[ref_view]
    total = None
    for j in range(n):
        if j == ref_view:
            continue
        warped = warp_features(features[j], cameras[ref_view], cameras[j], candidates.values)
        corr = (warped * ref.unsqueeze(0)).mean(dim=1)
        total = corr if total is None else total + corr
    return CostVolume(total / (n - 1), ref_view)


def refine_volume(
    volume: CostVolume,
    features: torch.Tensor,
    weights: NetworkWeights,
    prefix: str = "depth",
) -> torch.Tensor:
    """Raw volume plus the U-Net correction stored under ``prefix``.

    Zeroing ``depth.head2`` gives back the volume unchanged.
    """
    corr = volume.corr
    if features.shape[-2:] != corr.shape[-2:]:
        raise ShapeError(f"Volume {tuple(corr.shape)} and features {tuple(features.shape)} disagree spatially")
    x = torch.cat([corr, features.to(corr.dtype)], dim=0).unsqueeze(0)
    return corr + weights.call(prefix, x)[0]


def regress_depth(logits: torch.Tensor, candidates: DepthCandidates) -> DepthResult:
    if logits.dim() != 3 or logits.shape[0] != len(candidates):
        raise ShapeError(f"Logits must be {len(candidates)} x H x W, got {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise NonFiniteError("Depth logits contain non-finite values")
    probs = torch.softmax(logits, dim=0)
    values = torch.as_tensor(candidates.values, dtype=logits.dtype, device=logits.device)
    depth = (probs * values[:, None, None]).sum(dim=0)
    depth = depth.clamp(float(values[0]), float(values[-1]))
    return DepthResult(depth, probs, candidates)


def estimate_depths(
    features: torch.Tensor,
    cameras: Sequence[CameraView],
    candidates: DepthCandidates,
    weights: NetworkWeights,
) -> list[DepthResult]:
    """Learned path: cost volume, U-Net refinement, regression for every view."""
    results = []
    for i in range(features.shape[0]):
        volume = build_cost_volume(features, cameras, candidates, i)
        results.append(regress_depth(refine_volume(volume, features[i], weights), candidates))
    return results


def raw_photometric_features(images, patch: int = 3) -> torch.Tensor:
    """Per-pixel RGB patches, zero mean and norm sqrt(C) per pixel.

    With this normalization the channel-mean correlation is the cosine
    similarity of two patches.
    """
    x = as_image_tensor(images, torch.float64)
    if x.shape[0] == 0:
        raise EmptyInputError("Empty image set")
    n, _, h, w = x.shape
    r = patch // 2
    padded = F.pad(x, (r, r, r, r), mode="replicate")
    cols = F.unfold(padded, kernel_size=patch).view(n, 3 * patch * patch, h, w)
    cols = cols - cols.mean(dim=1, keepdim=True)
    norm = cols.norm(dim=1, keepdim=True).clamp_min(1e-12)
    return cols / norm * np.sqrt(cols.shape[1])


def estimate_depths_raw(
    images,
    cameras: Sequence[CameraView],
    candidates: DepthCandidates,
    temperature: float = 0.02,
) -> list[DepthResult]:
    """Full-resolution plane sweep on raw patches; no learned refinement."""
    if temperature <= 0:
        raise ValidationError(f"Temperature must be positive, got {temperature}")
    feats = raw_photometric_features(images)
    results = []
    for i in range(feats.shape[0]):
        volume = build_cost_volume(feats, cameras, candidates, i)
        results.append(regress_depth(volume.corr / temperature, candidates))
    LOG.info("raw plane sweep: %d views, %d candidates", feats.shape[0], len(candidates))
    return results
