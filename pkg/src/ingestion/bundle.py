"""Scene bundles: a JSON manifest plus PPM images and PGM label/depth maps.

Layout of a bundle directory::

    manifest.json
    images/<view>.ppm   8-bit RGB
    labels/<view>.pgm   8-bit class ids, 255 = ignore
    depth/<view>.pgm    16-bit depth x 1000, 0 = invalid
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from src.config import IGNORE_LABEL
from src.errors import DimensionMismatchError, LabelRangeError, ManifestError, MissingFileError, QuaternionNormError
from src.geometry.cameras import CameraView
from src.geometry.rotations import matrix_to_quaternion, quaternions_to_matrices
from src.ingestion.importer import (
    dequantize_depth,
    dequantize_image,
    load_pgm,
    load_ppm,
    quantize_depth,
    quantize_image,
    save_pgm,
    save_ppm,
)
from src.losses.objectives import LabelMap

LOG = logging.getLogger("semsplat.bundle")

MANIFEST = "manifest.json"
FORMAT = "semsplat-bundle"
VERSION = 1
QUAT_NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class BundleView:
    name: str
    camera: CameraView
    image: np.ndarray
    labels: np.ndarray | None = None
    depth: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SceneBundle:
    views: list[BundleView]
    class_names: list[str]
    near: float
    far: float
    meta: dict[str, object] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.views)

    def view(self, index: int) -> BundleView:
        if not 0 <= index < len(self.views):
            raise ManifestError(f"View {index} out of range (bundle has {len(self.views)} views)")
        return self.views[index]

    def images(self, indices: Sequence[int]) -> np.ndarray:
        """(N, 3, H, W) float images in [0, 1]."""
        return np.stack([dequantize_image(self.view(i).image) for i in indices])

    def cameras(self, indices: Sequence[int]) -> list[CameraView]:
        return [self.view(i).camera for i in indices]

    def label_map(self, index: int) -> LabelMap:
        labels = self.view(index).labels
        if labels is None:
            raise MissingFileError(f"View {self.views[index].name} has no label map")
        return LabelMap(labels, self.num_classes)

    def depth_map(self, index: int) -> np.ndarray:
        depth = self.view(index).depth
        if depth is None:
            raise MissingFileError(f"View {self.views[index].name} has no depth map")
        return dequantize_depth(depth)

    def validate(self) -> "SceneBundle":
        if not self.views:
            raise ManifestError("Bundle has no views")
        if not 0 < self.near < self.far:
            raise ManifestError(f"Bundle needs 0 < near < far, got near={self.near} far={self.far}")
        if not self.class_names:
            raise LabelRangeError("Bundle lists no class names")
        if len(set(self.class_names)) != len(self.class_names):
            raise ManifestError(f"Duplicate class names: {self.class_names}")
        for v in self.views:
            size = (v.camera.height, v.camera.width)
            if v.image.shape != size + (3,):
                raise DimensionMismatchError(f"{v.name}: image {v.image.shape[:2]} vs camera {size}")
            for kind, arr in (("labels", v.labels), ("depth", v.depth)):
                if arr is not None and arr.shape != size:
                    raise DimensionMismatchError(f"{v.name}: {kind} {arr.shape} vs camera {size}")
            if v.labels is not None:
                bad = (v.labels != IGNORE_LABEL) & (v.labels >= self.num_classes)
                if np.any(bad):
                    raise LabelRangeError(
                        f"{v.name}: label {int(v.labels[bad].max())} but only {self.num_classes} classes"
                    )
        return self


def _camera_entry(name: str, cam: CameraView, files: dict[str, str]) -> dict:
    return {
        "name": name,
        "width": cam.width,
        "height": cam.height,
        "intrinsics": cam.intrinsics.tolist(),
        "rotation": matrix_to_quaternion(cam.rotation).tolist(),
        "translation": cam.translation.tolist(),
        **files,
    }


def save_bundle(bundle: SceneBundle, path: str | Path) -> Path:
    """Write ``bundle`` under directory ``path``; returns the manifest path."""
    bundle.validate()
    root = Path(path)
    for sub in ("images", "labels", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for v in bundle.views:
        files = {"image": f"images/{v.name}.ppm"}
        save_ppm(root / files["image"], v.image)
        if v.labels is not None:
            files["labels"] = f"labels/{v.name}.pgm"
            save_pgm(root / files["labels"], v.labels.astype(np.uint8))
        if v.depth is not None:
            files["depth"] = f"depth/{v.name}.pgm"
            save_pgm(root / files["depth"], v.depth.astype(np.uint16))
        entries.append(_camera_entry(v.name, v.camera, files))
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "class_names": list(bundle.class_names),
        "num_classes": bundle.num_classes,
        "near": bundle.near,
        "far": bundle.far,
        "meta": bundle.meta,
        "cameras": entries,
    }
    out = root / MANIFEST
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    LOG.info("saved bundle with %d views to %s", len(bundle.views), root)
    return out


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise ManifestError(f"{where}: missing key {key!r}")
    return entry[key]


def _load_camera(entry: dict, where: str) -> CameraView:
    quat = np.asarray(_require(entry, "rotation", where), dtype=np.float64)
    if quat.shape != (4,):
        raise ManifestError(f"{where}: rotation must be a (w, x, y, z) quaternion")
    norm = float(np.linalg.norm(quat))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise QuaternionNormError(f"{where}: quaternion norm {norm:.9f} is not 1")
    try:
        return CameraView(
            np.asarray(_require(entry, "intrinsics", where), dtype=np.float64),
            quaternions_to_matrices(quat),
            np.asarray(_require(entry, "translation", where), dtype=np.float64),
            int(_require(entry, "width", where)),
            int(_require(entry, "height", where)),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: malformed camera ({exc})") from exc


def load_bundle(path: str | Path) -> SceneBundle:
    """Read a bundle directory (or its manifest file) and validate it."""
    path = Path(path)
    manifest_path = path if path.is_file() else path / MANIFEST
    if not manifest_path.exists():
        raise MissingFileError(f"Bundle manifest not found: {manifest_path}")
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise ManifestError(f"{manifest_path}: not a {FORMAT} manifest")
    views = []
    for i, entry in enumerate(_require(manifest, "cameras", str(manifest_path))):
        where = f"{manifest_path.name}:cameras[{i}]"
        name = str(entry.get("name", f"view_{i:03d}"))
        labels = load_pgm(root / entry["labels"]) if "labels" in entry else None
        depth = load_pgm(root / entry["depth"]) if "depth" in entry else None
        if labels is not None and labels.dtype != np.uint8:
            raise ManifestError(f"{where}: label maps must be 8-bit")
        if depth is not None and depth.dtype != np.uint16:
            raise ManifestError(f"{where}: depth maps must be 16-bit")
        views.append(
            BundleView(
                name=name,
                camera=_load_camera(entry, where),
                image=load_ppm(root / _require(entry, "image", where)),
                labels=labels,
                depth=depth,
            )
        )
    class_names = [str(c) for c in _require(manifest, "class_names", str(manifest_path))]
    declared = manifest.get("num_classes", len(class_names))
    if declared != len(class_names):
        raise LabelRangeError(f"{manifest_path}: num_classes={declared} but {len(class_names)} class names")
    bundle = SceneBundle(
        views=views,
        class_names=class_names,
        near=float(_require(manifest, "near", str(manifest_path))),
        far=float(_require(manifest, "far", str(manifest_path))),
        meta=dict(manifest.get("meta", {})),
    )
    return bundle.validate()


def bundle_from_scene(scene, near: float = 0.5, far: float = 15.0) -> SceneBundle:
    """Quantize a SyntheticScene into a bundle (one view per camera)."""
    views = [
        BundleView(
            name=f"view_{i:03d}",
            camera=cam,
            image=quantize_image(scene.images[i]),
            labels=scene.labels[i].labels.astype(np.uint8),
            depth=quantize_depth(scene.depths[i]),
        )
        for i, cam in enumerate(scene.cameras)
    ]
    meta = {"seed": scene.seed, "held_out": scene.held_out}
    return SceneBundle(views, list(scene.class_names), near, far, meta).validate()
