"""Small builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from src.gaussians.model import GaussianSet
from src.gaussians.sh import rgb_to_dc
from src.geometry.cameras import CameraView
from src.geometry.rotations import random_rotation


def random_camera(rng: np.random.Generator, width: int = 32, height: int = 32) -> CameraView:
    k = np.array(
        [
            [rng.uniform(0.6, 1.4), rng.uniform(-0.05, 0.05), rng.uniform(0.4, 0.6)],
            [0.0, rng.uniform(0.6, 1.4), rng.uniform(0.4, 0.6)],
            [0.0, 0.0, 1.0],
        ]
    )
    return CameraView(k, random_rotation(rng), rng.normal(size=3), width, height)


def identity_camera(width: int = 16, height: int = 16) -> CameraView:
    return CameraView(np.eye(3), np.eye(3), np.zeros(3), width, height)


def splat_set(positions, opacities, scales, rgb, logits, sem_scales=None) -> GaussianSet:
    """Axis-aligned Gaussians with view-independent colors."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    g = len(positions)
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (g, 3)).copy()
    sem_scales = scales if sem_scales is None else np.broadcast_to(np.asarray(sem_scales, dtype=np.float64), (g, 3)).copy()
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (g, 1))
    sh = np.zeros((g, 3, 1))
    sh[:, :, 0] = rgb_to_dc(np.asarray(rgb, dtype=np.float64).reshape(g, 3))
    return GaussianSet(
        positions=positions,
        opacities=np.asarray(opacities, dtype=np.float64).reshape(g),
        color_scales=scales,
        color_rotations=quats,
        sh_coeffs=sh,
        sem_scales=sem_scales,
        sem_rotations=quats.copy(),
        class_logits=np.atleast_2d(np.asarray(logits, dtype=np.float64)),
    )
