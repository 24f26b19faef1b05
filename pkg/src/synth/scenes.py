"""Procedural labeled scenes built from surface Gaussians.

A room is a floor plus four walls, with boxes and ellipsoids standing on
the floor. Every surface is covered by flat Gaussians on a regular grid,
and the supervision maps of each camera are renders of that set.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from src.config import IGNORE_LABEL, RasterConfig
from src.errors import PlacementError, ValidationError
from src.gaussians.model import GaussianSet
from src.gaussians.sh import rgb_to_dc
from src.geometry.cameras import CameraView
from src.geometry.rotations import matrix_to_quaternion
from src.losses.fitting import SupervisedView
from src.losses.objectives import LabelMap
from src.rendering.rasterizer import rasterize

LOG = logging.getLogger("semsplat.synth")

ROOM_HALF = 2.5
FLOOR_Y = 1.0
CEILING_Y = -2.5
CAMERA_RADIUS = 2.1
CAMERA_Y = -0.3
CAMERA_TARGET = np.array([0.0, 0.6, 0.0])
OBJECT_DISK = 1.2
OPACITY = 0.95
LOGIT_SCALE = 8.0
THIN = 0.1
COVERAGE_MIN = 0.5
MAX_PLACEMENT_TRIES = 200

BASE_COLORS = np.array(
    [
        [0.55, 0.45, 0.35],
        [0.80, 0.80, 0.75],
        [0.85, 0.20, 0.20],
        [0.20, 0.60, 0.85],
        [0.25, 0.75, 0.30],
        [0.90, 0.75, 0.20],
        [0.60, 0.30, 0.70],
        [0.95, 0.55, 0.15],
    ]
)


@dataclass(frozen=True)
class SceneObject:
    kind: str
    class_id: int
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    @property
    def footprint(self) -> float:
        return float(np.hypot(self.half_extents[0], self.half_extents[2]))


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    gaussians: GaussianSet
    cameras: list[CameraView]
    images: list[np.ndarray]
    labels: list[LabelMap]
    depths: list[np.ndarray]
    class_names: list[str]
    objects: list[SceneObject]
    seed: int
    held_out: int

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_views(self) -> list[int]:
        return [i for i in range(len(self.cameras)) if i != self.held_out]

    def supervised_views(self, indices=None) -> list[SupervisedView]:
        indices = range(len(self.cameras)) if indices is None else indices
        return [SupervisedView(self.cameras[i], self.labels[i]) for i in indices]


@dataclass(frozen=True, eq=False)
class PlanePair:
    images: np.ndarray
    cameras: list[CameraView]
    depth: np.ndarray
    disparity: float


def _frame_from_normals(normals: np.ndarray) -> np.ndarray:
    """Rotations whose third column is each unit normal."""
    helper = np.where(np.abs(normals[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(helper, normals)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    return np.stack([t1, t2, normals], axis=2)


class _SurfaceBuilder:
    """Accumulates flat Gaussians surface by surface."""

    def __init__(self, sigma: float, num_classes: int, sh_coeffs: int, rng: np.random.Generator):
        self.sigma = sigma
        self.num_classes = num_classes
        self.sh_coeffs = sh_coeffs
        self.rng = rng
        self.parts: list[dict[str, np.ndarray]] = []

    def add(self, points: np.ndarray, normals: np.ndarray, class_id: int) -> None:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        rotations = np.stack([matrix_to_quaternion(r) for r in _frame_from_normals(normals)])
        freq = self.rng.uniform(1.5, 4.0, size=3)
        phase = self.rng.uniform(0, 2 * np.pi)
        shade = 0.8 + 0.2 * np.sin(points @ freq + phase)
        rgb = np.clip(BASE_COLORS[class_id % len(BASE_COLORS)] * shade[:, None], 0.0, 1.0)
        sh = np.zeros((len(points), 3, self.sh_coeffs))
        sh[:, :, 0] = rgb_to_dc(rgb)
        logits = np.zeros((len(points), self.num_classes))
        logits[:, class_id] = LOGIT_SCALE
        self.parts.append(
            {
                "positions": points,
                "scales": np.tile([self.sigma, self.sigma, THIN * self.sigma], (len(points), 1)),
                "rotations": rotations,
                "sh": sh,
                "logits": logits,
            }
        )

    def build(self) -> GaussianSet:
        cat = {key: np.concatenate([p[key] for p in self.parts]) for key in self.parts[0]}
        return GaussianSet(
            positions=cat["positions"],
            opacities=np.full(len(cat["positions"]), OPACITY),
            color_scales=cat["scales"],
            color_rotations=cat["rotations"],
            sh_coeffs=cat["sh"],
            sem_scales=cat["scales"].copy(),
            sem_rotations=cat["rotations"].copy(),
            class_logits=cat["logits"],
        )


def _grid(lo: float, hi: float, spacing: float) -> np.ndarray:
    count = max(1, int(np.floor((hi - lo) / spacing)))
    offset = 0.5 * ((hi - lo) - (count - 1) * spacing)
    return lo + offset + spacing * np.arange(count)


def _plane(axis: int, value: float, ranges, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Grid points on the plane {x[axis] = value}; ``ranges`` covers the two other axes."""
    others = [a for a in range(3) if a != axis]
    ga, gb = np.meshgrid(_grid(*ranges[0], spacing), _grid(*ranges[1], spacing), indexing="ij")
    pts = np.zeros((ga.size, 3))
    pts[:, axis] = value
    pts[:, others[0]] = ga.reshape(-1)
    pts[:, others[1]] = gb.reshape(-1)
    normals = np.zeros_like(pts)
    normals[:, axis] = 1.0
    return pts, normals


def _box_surface(obj: SceneObject, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(obj.center)
    h = np.asarray(obj.half_extents)
    pts, nrm = [], []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        ranges = [(c[o] - h[o], c[o] + h[o]) for o in others]
        # the bottom face rests on the floor
        sides = (-1.0,) if axis == 1 else (-1.0, 1.0)
        for side in sides:
            p, n = _plane(axis, c[axis] + side * h[axis], ranges, spacing)
            pts.append(p)
            nrm.append(n * side)
    return np.concatenate(pts), np.concatenate(nrm)


def _ellipsoid_surface(obj: SceneObject, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    a, b, c = obj.half_extents
    p = 1.6
    area = 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)
    n = max(16, int(np.ceil(area / spacing**2)))
    k = np.arange(n) + 0.5
    theta = np.arccos(1 - 2 * k / n)
    phi = np.pi * (1 + 5**0.5) * k
    unit = np.column_stack([np.sin(theta) * np.cos(phi), np.cos(theta), np.sin(theta) * np.sin(phi)])
    radii = np.array([a, b, c])
    return np.asarray(obj.center) + unit * radii, unit / radii


def _place_objects(rng: np.random.Generator, n_objects: int, num_classes: int) -> list[SceneObject]:
    placed: list[SceneObject] = []
    for i in range(n_objects):
        class_id = 2 + i % (num_classes - 2) if num_classes > 2 else 1
        kind = "box" if i % 2 == 0 else "ellipsoid"
        for _ in range(MAX_PLACEMENT_TRIES):
            half = (rng.uniform(0.2, 0.45), rng.uniform(0.25, 0.6), rng.uniform(0.2, 0.45))
            r, ang = OBJECT_DISK * np.sqrt(rng.random()), rng.uniform(0, 2 * np.pi)
            center = (float(r * np.cos(ang)), FLOOR_Y - half[1], float(r * np.sin(ang)))
            obj = SceneObject(kind, class_id, center, half)
            if all(
                np.hypot(center[0] - o.center[0], center[2] - o.center[2]) > obj.footprint + o.footprint + 0.1
                for o in placed
            ):
                placed.append(obj)
                break
        else:
            raise PlacementError(f"Could not place object {i} after {MAX_PLACEMENT_TRIES} tries")
    return placed


def arc_cameras(n_cameras: int, resolution: int, radius: float = CAMERA_RADIUS) -> list[CameraView]:
    """Cameras on an arc facing the room center."""
    angles = np.linspace(-np.pi / 3, np.pi / 3, n_cameras)
    return [
        CameraView.look_at(
            np.array([radius * np.sin(a), CAMERA_Y, -radius * np.cos(a)]),
            CAMERA_TARGET,
            resolution,
            resolution,
        )
        for a in angles
    ]


def class_names_for(num_classes: int, objects: list[SceneObject]) -> list[str]:
    names = ["floor", "wall"][:num_classes]
    for c in range(len(names), num_classes):
        kinds = sorted({o.kind for o in objects if o.class_id == c})
        names.append("_".join(kinds) + f"_{c}" if kinds else f"class_{c}")
    return names


def generate_room(
    seed: int,
    num_classes: int = 6,
    n_objects: int = 4,
    resolution: int = 64,
    n_cameras: int = 6,
    spacing: float = 0.12,
    sh_degree: int = 1,
    raster: RasterConfig | None = None,
) -> SyntheticScene:
    if num_classes < 2:
        raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
    if resolution < 32:
        raise ValidationError(f"resolution must be >= 32, got {resolution}")
    if n_cameras < 3:
        raise ValidationError(f"need at least 3 cameras, got {n_cameras}")
    if n_objects < 0 or spacing <= 0:
        raise ValidationError("n_objects must be >= 0 and spacing > 0")
    rng = np.random.default_rng(seed)
    sigma = 0.6 * spacing
    builder = _SurfaceBuilder(sigma, num_classes, (sh_degree + 1) ** 2, rng)

    room = (-ROOM_HALF, ROOM_HALF)
    pts, nrm = _plane(1, FLOOR_Y, [room, room], spacing)
    builder.add(pts, -nrm, 0)
    for axis in (0, 2):
        for side in (-1.0, 1.0):
            ranges = [(CEILING_Y, FLOOR_Y), room] if axis == 0 else [room, (CEILING_Y, FLOOR_Y)]
            pts, nrm = _plane(axis, side * ROOM_HALF, ranges, spacing)
            builder.add(pts, -side * nrm, 1)

    objects = _place_objects(rng, n_objects, num_classes)
    for obj in objects:
        surface = _box_surface if obj.kind == "box" else _ellipsoid_surface
        builder.add(*surface(obj, spacing), obj.class_id)

    gaussians = builder.build()
    cameras = arc_cameras(n_cameras, resolution)
    images, labels, depths = [], [], []
    for cam in cameras:
        maps, _ = rasterize(gaussians, cam, config=raster)
        covered = maps.sem_alpha_acc >= COVERAGE_MIN
        images.append(maps.rgb)
        labels.append(LabelMap(np.where(covered, maps.labels, IGNORE_LABEL), num_classes))
        depths.append(np.where(maps.alpha_acc >= COVERAGE_MIN, maps.depth, 0.0))
    LOG.info(
        "room seed=%d: %d Gaussians, %d objects, %d cameras at %dpx",
        seed, len(gaussians), len(objects), len(cameras), resolution,
    )
    return SyntheticScene(
        gaussians=gaussians,
        cameras=cameras,
        images=images,
        labels=labels,
        depths=depths,
        class_names=class_names_for(num_classes, objects),
        objects=objects,
        seed=seed,
        held_out=n_cameras // 2,
    )


def plane_texture(points: np.ndarray, depth: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """RGB sinusoid texture on plane coordinates (N, 2); wavelengths 10-24 px at ``depth``."""
    rgb = np.zeros((len(points), 3))
    for channel in range(3):
        for _ in range(3):
            wavelength = rng.uniform(10.0, 24.0) * depth / scale
            ang = rng.uniform(0, np.pi)
            k = 2 * np.pi / wavelength * np.array([np.cos(ang), np.sin(ang)])
            rgb[:, channel] += np.sin(points @ k + rng.uniform(0, 2 * np.pi))
    return np.clip(0.5 + rgb / 6.0, 0.0, 1.0)


def textured_plane_pair(
    depth: float,
    baseline: float,
    resolution: int = 64,
    fx: float = 1.0,
    seed: int = 0,
) -> PlanePair:
    """Two views of the textured plane z = ``depth``.

    The reference camera sits at the origin; the source camera is shifted
    by ``baseline`` along +x. Both images sample the texture analytically.
    """
    if depth <= 0:
        raise ValidationError(f"depth must be > 0, got {depth}")
    if not 0 <= baseline < depth:
        raise ValidationError(f"baseline must lie in [0, depth), got {baseline}")
    k = np.array([[fx, 0.0, 0.5], [0.0, fx, 0.5], [0.0, 0.0, 1.0]])
    ref = CameraView(k, np.eye(3), np.zeros(3), resolution, resolution)
    src = CameraView(k, np.eye(3), np.array([-baseline, 0.0, 0.0]), resolution, resolution)
    cols, rows = np.meshgrid(np.arange(resolution) + 0.5, np.arange(resolution) + 0.5)
    scale = fx * resolution
    images = []
    for cam in (ref, src):
        xn = (cols / resolution - 0.5) / fx
        yn = (rows / resolution - 0.5) / fx
        world = np.column_stack([(xn * depth - cam.translation[0]).reshape(-1), (yn * depth).reshape(-1)])
        rgb = plane_texture(world, depth, scale, np.random.default_rng(seed))
        images.append(rgb.T.reshape(3, resolution, resolution))
    return PlanePair(
        images=np.stack(images),
        cameras=[ref, src],
        depth=np.full((resolution, resolution), float(depth)),
        disparity=scale * baseline / depth,
    )
