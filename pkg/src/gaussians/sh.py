"""Real spherical harmonics up to degree 2 for view-dependent color."""

from __future__ import annotations

import numpy as np

from src.errors import ShapeError, ValidationError

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)

MAX_DEGREE = 2


def degree_from_coeffs(count: int) -> int:
    degree = int(round(np.sqrt(count))) - 1
    if (degree + 1) ** 2 != count or not 0 <= degree <= MAX_DEGREE:
        raise ValidationError(f"{count} is not a supported SH coefficient count")
    return degree


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values (..., (degree+1)^2) for unit directions (..., 3)."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValidationError(f"SH degree must be in [0, {MAX_DEGREE}], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    if dirs.shape[-1] != 3:
        raise ShapeError(f"Directions must have 3 components, got {dirs.shape}")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, C0)]
    if degree >= 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
    return np.stack(out, axis=-1)


def eval_sh(coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Raw SH sum: coeffs (G, 3, B), dirs (G, 3) -> (G, 3)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    degree = degree_from_coeffs(coeffs.shape[-1])
    basis = sh_basis(dirs, degree)
    return np.einsum("gcb,gb->gc", coeffs, basis)


def sh_to_rgb(coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    return np.clip(eval_sh(coeffs, dirs) + 0.5, 0.0, 1.0)


def rgb_to_dc(rgb: np.ndarray) -> np.ndarray:
    """DC coefficient reproducing ``rgb`` when higher bands are zero."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0
