"""Dual Gaussians: shared position/opacity, separate color and semantic parts."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from src.errors import EmptyInputError, ShapeError, ValidationError
from src.gaussians.sh import degree_from_coeffs
from src.geometry.rotations import QUAT_EPS, normalize_quaternions, quaternions_to_matrices
from src.ingestion.snapshots import read_snapshot, write_snapshot

UNIT_TOL = 1e-9


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def covariances_from(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """R diag(s^2) R^T for (G, 3) scales and (G, 4) quaternions."""
    scales = np.asarray(scales, dtype=np.float64)
    rotations = np.asarray(rotations, dtype=np.float64)
    if np.any(np.linalg.norm(rotations, axis=-1) < QUAT_EPS):
        raise ValidationError("Near-zero quaternion in covariance construction")
    if np.any(scales <= 0):
        raise ValidationError("Gaussian scales must be strictly positive")
    rot = quaternions_to_matrices(rotations)
    m = rot * scales[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def covariance_from(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    return covariances_from(np.asarray(scale)[None], np.asarray(rotation)[None])[0]


@dataclass(frozen=True, eq=False)
class DualGaussian:
    position: np.ndarray
    opacity: float
    color_scale: np.ndarray
    color_rotation: np.ndarray
    sh_coeffs: np.ndarray
    sem_scale: np.ndarray
    sem_rotation: np.ndarray
    class_logits: np.ndarray

    @property
    def color_covariance(self) -> np.ndarray:
        return covariance_from(self.color_scale, self.color_rotation)

    @property
    def semantic_covariance(self) -> np.ndarray:
        return covariance_from(self.sem_scale, self.sem_rotation)

    @property
    def class_probs(self) -> np.ndarray:
        return softmax(self.class_logits)


@dataclass(frozen=True, eq=False)
class BranchView:
    """One branch of a GaussianSet. ``positions``/``opacities`` are shared storage."""

    positions: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    payload: np.ndarray

    def covariances(self) -> np.ndarray:
        return covariances_from(self.scales, self.rotations)


_FIELDS = (
    "positions",
    "opacities",
    "color_scales",
    "color_rotations",
    "sh_coeffs",
    "sem_scales",
    "sem_rotations",
    "class_logits",
)


@dataclass(frozen=True, eq=False)
class GaussianSet:
    """Struct-of-arrays collection of G dual Gaussians.

    provenance (G, 3) holds (view, row, col) of the pixel that spawned each
    Gaussian, or -1 entries for Gaussians that do not come from a pixel.
    """

    positions: np.ndarray
    opacities: np.ndarray
    color_scales: np.ndarray
    color_rotations: np.ndarray
    sh_coeffs: np.ndarray
    sem_scales: np.ndarray
    sem_rotations: np.ndarray
    class_logits: np.ndarray
    provenance: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in _FIELDS:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        g = self.positions.shape[0]
        prov = self.provenance
        prov = np.full((g, 3), -1, dtype=np.int64) if prov is None else np.asarray(prov, dtype=np.int64)
        object.__setattr__(self, "provenance", prov)
        expected = {
            "positions": (g, 3),
            "opacities": (g,),
            "color_scales": (g, 3),
            "color_rotations": (g, 4),
            "sem_scales": (g, 3),
            "sem_rotations": (g, 4),
            "provenance": (g, 3),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {getattr(self, name).shape}")
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[:2] != (g, 3):
            raise ShapeError(f"sh_coeffs must be (G, 3, B), got {self.sh_coeffs.shape}")
        degree_from_coeffs(self.sh_coeffs.shape[2])
        if self.class_logits.ndim != 2 or self.class_logits.shape[0] != g or self.class_logits.shape[1] < 2:
            raise ShapeError(f"class_logits must be (G, K>=2), got {self.class_logits.shape}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_logits.shape[1]

    @property
    def sh_degree(self) -> int:
        return degree_from_coeffs(self.sh_coeffs.shape[2])

    def __getitem__(self, j: int) -> DualGaussian:
        return DualGaussian(
            position=self.positions[j],
            opacity=float(self.opacities[j]),
            color_scale=self.color_scales[j],
            color_rotation=self.color_rotations[j],
            sh_coeffs=self.sh_coeffs[j],
            sem_scale=self.sem_scales[j],
            sem_rotation=self.sem_rotations[j],
            class_logits=self.class_logits[j],
        )

    def color_view(self) -> BranchView:
        return BranchView(self.positions, self.opacities, self.color_scales, self.color_rotations, self.sh_coeffs)

    def semantic_view(self) -> BranchView:
        return BranchView(self.positions, self.opacities, self.sem_scales, self.sem_rotations, self.class_logits)

    def shares_semantic_covariance(self) -> bool:
        return np.array_equal(self.color_scales, self.sem_scales) and np.array_equal(
            self.color_rotations, self.sem_rotations
        )

    def validate(self) -> "GaussianSet":
        """Check value invariants; raises ValidationError on the first failure."""
        arrays = [getattr(self, name) for name in _FIELDS]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValidationError("GaussianSet has non-finite attributes")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise ValidationError("Opacities must lie in [0, 1]")
        if np.any(self.color_scales <= 0) or np.any(self.sem_scales <= 0):
            raise ValidationError("Scales must be strictly positive")
        for name in ("color_rotations", "sem_rotations"):
            norms = np.linalg.norm(getattr(self, name), axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOL):
                raise ValidationError(f"{name} are not unit quaternions (max dev {np.max(np.abs(norms - 1)):.2e})")
        for cov in (self.color_view().covariances(), self.semantic_view().covariances()):
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ValidationError("Covariance is not positive definite") from exc
        return self

    def take(self, index: np.ndarray) -> "GaussianSet":
        index = np.asarray(index)
        return GaussianSet(*(getattr(self, name)[index] for name in _FIELDS), provenance=self.provenance[index])

    def with_class_logits(self, logits: np.ndarray) -> "GaussianSet":
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != self.class_logits.shape:
            raise ShapeError(f"class_logits: expected {self.class_logits.shape}, got {logits.shape}")
        fields = {name: getattr(self, name) for name in _FIELDS}
        fields["class_logits"] = logits
        return GaussianSet(**fields, provenance=self.provenance)

    @classmethod
    def concat(cls, sets: Sequence["GaussianSet"]) -> "GaussianSet":
        if not sets:
            raise EmptyInputError("Nothing to concatenate")
        return cls(
            *(np.concatenate([getattr(s, name) for s in sets]) for name in _FIELDS),
            provenance=np.concatenate([s.provenance for s in sets]),
        )


def save_gaussians(gaussians: GaussianSet, prefix: str | Path) -> None:
    blocks = {name: getattr(gaussians, name) for name in _FIELDS}
    blocks["provenance"] = gaussians.provenance
    write_snapshot(prefix, blocks, meta={"kind": "gaussians", "count": str(len(gaussians))})


def load_gaussians(prefix: str | Path) -> GaussianSet:
    blocks, _ = read_snapshot(prefix)
    missing = [name for name in _FIELDS if name not in blocks]
    if missing:
        raise ValidationError(f"Gaussian snapshot lacks blocks: {missing}")
    prov = blocks.get("provenance")
    # float32 storage breaks the unit-norm tolerance
    for name in ("color_rotations", "sem_rotations"):
        blocks[name] = normalize_quaternions(blocks[name])
    return GaussianSet(
        *(blocks[name] for name in _FIELDS),
        provenance=None if prov is None else np.rint(prov).astype(np.int64),
    )
