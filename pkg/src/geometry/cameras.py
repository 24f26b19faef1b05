"""Pinhole cameras with resolution-normalized intrinsics.

Conventions: x right, y down, z forward. Extrinsics map world to camera
(X_cam = R @ X_world + t). Intrinsics act on normalized image coordinates
(pixel / image size), so pixel (col, row) has center ((col + 0.5) / W,
(row + 0.5) / H) in the normalized plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.errors import BehindCameraError, CameraError, DegenerateCameraError, ValidationError

ORTHO_TOL = 1e-9
DET_EPS = 1e-12
MIN_DEPTH = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CameraView:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        k = _frozen(self.intrinsics)
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if k.shape != (3, 3) or r.shape != (3, 3) or t.shape != (3,):
            raise CameraError(f"Bad camera shapes: K{k.shape} R{r.shape} t{t.shape}")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise CameraError("Camera parameters must be finite")
        if int(self.width) != self.width or int(self.height) != self.height or self.width <= 0 or self.height <= 0:
            raise CameraError(f"Image size must be positive integers, got {self.width}x{self.height}")
        if np.max(np.abs(r @ r.T - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise CameraError("Rotation must be orthonormal with determinant +1")
        if k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0 or k[2, 2] != 1:
            raise CameraError(f"Intrinsics must be upper-triangular with bottom row (0,0,1): {k.tolist()}")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise CameraError("Intrinsics focal entries must be strictly positive")
        t.setflags(write=False)
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def look_at(
        cls,
        eye: np.ndarray,
        target: np.ndarray,
        width: int,
        height: int,
        fx: float = 0.9,
        fy: float = 0.9,
        cx: float = 0.5,
        cy: float = 0.5,
        down: tuple[float, float, float] = (0.0, 1.0, 0.0),
    ) -> "CameraView":
        """Camera at ``eye`` looking at ``target`` with +y pointing down."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm < MIN_DEPTH:
            raise CameraError("look_at target coincides with eye")
        forward /= norm
        right = np.cross(np.asarray(down, dtype=np.float64), forward)
        if np.linalg.norm(right) < 1e-9:
            raise CameraError("look_at direction is parallel to the down vector")
        right /= np.linalg.norm(right)
        down_axis = np.cross(forward, right)
        rot = np.stack([right, down_axis, forward])
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(k, rot, -rot @ eye, width, height)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def pixel_intrinsics(self) -> np.ndarray:
        return np.diag([self.width, self.height, 1.0]) @ self.intrinsics

    def resized(self, width: int, height: int) -> "CameraView":
        """Same normalized camera at another resolution."""
        return CameraView(self.intrinsics, self.rotation, self.translation, width, height)

    def rebased(self, world_rotation: np.ndarray, world_translation: np.ndarray) -> "CameraView":
        """Camera expressed in a new world frame X' = Rw @ X + tw."""
        rw = np.asarray(world_rotation, dtype=np.float64)
        tw = np.asarray(world_translation, dtype=np.float64)
        rot = self.rotation @ rw.T
        return CameraView(self.intrinsics, rot, self.translation - rot @ tw, self.width, self.height)


@dataclass(frozen=True, eq=False)
class ProjectiveMatrix:
    m: np.ndarray

    def __post_init__(self) -> None:
        m = _frozen(self.m)
        if m.shape != (4, 4):
            raise ValidationError(f"Projective matrix must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError(f"Projective matrix bottom row must be (0,0,0,1), got {m[3].tolist()}")
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateCameraError("Projective matrix is singular (|det| <= 1e-12)")
        object.__setattr__(self, "m", m)

    def inverse(self) -> "ProjectiveMatrix":
        return ProjectiveMatrix(_invert_projective(self.m))


def _invert_projective(m: np.ndarray) -> np.ndarray:
    a, b = m[:3, :3], m[:3, 3]
    if abs(np.linalg.det(a)) <= DET_EPS:
        raise DegenerateCameraError("Cannot invert a singular projective matrix")
    a_inv = np.linalg.inv(a)
    out = np.eye(4)
    out[:3, :3] = a_inv
    out[:3, 3] = -a_inv @ b
    return out


def build_projective(cam: CameraView) -> ProjectiveMatrix:
    m = np.eye(4)
    m[:3, :3] = cam.intrinsics @ cam.rotation
    m[:3, 3] = cam.intrinsics @ cam.translation
    return ProjectiveMatrix(m)


def relative_transform(p_i: ProjectiveMatrix, p_j: ProjectiveMatrix) -> ProjectiveMatrix:
    """P_i @ P_j^-1: maps view-j projective coordinates into view i."""
    return ProjectiveMatrix(p_i.m @ _invert_projective(p_j.m))


def decompose_projective(p: ProjectiveMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover (K, R, t) from a projective matrix by RQ decomposition."""
    a, b = p.m[:3, :3], p.m[:3, 3]
    flip = np.flipud(np.eye(3))
    q, r = np.linalg.qr((flip @ a).T)
    k = flip @ r.T @ flip
    rot = flip @ q.T
    signs = np.diag(np.sign(np.diag(k)))
    k = k @ signs
    rot = signs @ rot
    if np.linalg.det(rot) < 0:
        raise CameraError("Projective block has negative determinant; no proper rotation")
    k = k / k[2, 2]
    return k, rot, np.linalg.solve(k, b)


def back_project(pixel: tuple[float, float], depth: float, cam: CameraView) -> np.ndarray:
    """World point seen at pixel (u, v) with camera-frame depth ``depth``."""
    if not depth > 0:
        raise ValidationError(f"Depth must be positive, got {depth}")
    return back_project_many(np.asarray([pixel], dtype=np.float64), np.asarray([depth], dtype=np.float64), cam)[0]


def back_project_many(pixels: np.ndarray, depths: np.ndarray, cam: CameraView) -> np.ndarray:
    """Vectorized back_project: pixels (N, 2), depths (N,) -> (N, 3)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= 0):
        raise ValidationError("All depths must be positive")
    norm = np.stack([pixels[:, 0] / cam.width, pixels[:, 1] / cam.height, np.ones(len(pixels))], axis=1)
    rays = np.linalg.solve(cam.intrinsics, norm.T).T
    x_cam = rays * depths[:, None]
    return (x_cam - cam.translation) @ cam.rotation


def project(point: np.ndarray, cam: CameraView) -> tuple[tuple[float, float], float]:
    uv, z = project_many(np.asarray(point, dtype=np.float64)[None], cam)
    if not z[0] > MIN_DEPTH:
        raise BehindCameraError(f"Point {np.asarray(point).tolist()} is behind the camera (z={z[0]:.3g})")
    return (float(uv[0, 0]), float(uv[0, 1])), float(z[0])


def project_many(points: np.ndarray, cam: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (N, 2) and camera depths (N,). No culling."""
    x_cam = np.asarray(points, dtype=np.float64) @ cam.rotation.T + cam.translation
    z = x_cam[:, 2]
    h = x_cam @ cam.intrinsics.T
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([cam.width * h[:, 0] / h[:, 2], cam.height * h[:, 1] / h[:, 2]], axis=1)
    return uv, z


def pixel_centers(width: int, height: int) -> np.ndarray:
    """(H*W, 2) pixel-center coordinates in row-major order."""
    cols, rows = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    return np.stack([cols.reshape(-1), rows.reshape(-1)], axis=1)
