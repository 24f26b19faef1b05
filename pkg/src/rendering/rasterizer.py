"""Tile-based forward splatting of dual Gaussians.

Every render runs two compositing passes over the same positions and
opacities: a color pass (color covariances, SH colors and depth) and a
semantic pass (semantic covariances, class distributions). When both
covariance sets are equal the semantic pass reuses the color weights.

Blend weights are kept in a BlendRecord so gradients of rendered maps
with respect to per-Gaussian colors and class distributions are exact
scatters of the forward weights.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import itertools
import logging
import threading
from typing import NamedTuple

import numpy as np

from src.config import IGNORE_LABEL, RasterConfig, resolve_threads
from src.errors import ShapeError, StaleRecordError
from src.gaussians.model import DualGaussian, GaussianSet, covariances_from, softmax
from src.gaussians.sh import sh_to_rgb
from src.geometry.cameras import CameraView, project, project_many

LOG = logging.getLogger("semsplat.rasterizer")

_pass_counter = itertools.count(1)
_pass_lock = threading.Lock()


def _next_pass_id() -> int:
    with _pass_lock:
        return next(_pass_counter)


class ProjectedGaussian(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    depth: float


@dataclass(frozen=True, eq=False)
class BlendWeights:
    """Sparse (pixel, gaussian, weight) triples in compositing order."""

    pixel: np.ndarray
    gaussian: np.ndarray
    weight: np.ndarray
    height: int
    width: int
    num_gaussians: int

    @property
    def num_pixels(self) -> int:
        return self.height * self.width

    def alpha(self) -> np.ndarray:
        return np.bincount(self.pixel, self.weight, minlength=self.num_pixels).reshape(self.height, self.width)

    def blend(self, values: np.ndarray) -> np.ndarray:
        """Composite per-Gaussian values (G, C) into a (C, H, W) map."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.num_gaussians:
            raise ShapeError(f"Expected values for {self.num_gaussians} Gaussians, got {values.shape[0]}")
        picked = values[self.gaussian] * self.weight[:, None]
        out = np.stack(
            [np.bincount(self.pixel, picked[:, c], minlength=self.num_pixels) for c in range(values.shape[1])]
        )
        return out.reshape(values.shape[1], self.height, self.width)

    def scatter(self, grad: np.ndarray) -> np.ndarray:
        """Adjoint of ``blend``: (C, H, W) pixel gradients -> (G, C)."""
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape[1:] != (self.height, self.width):
            raise ShapeError(f"Gradient map {grad.shape} does not match a {self.height}x{self.width} record")
        flat = grad.reshape(grad.shape[0], -1)[:, self.pixel] * self.weight
        out = np.stack([np.bincount(self.gaussian, flat[c], minlength=self.num_gaussians) for c in range(grad.shape[0])])
        return out.T

    def coverage(self) -> np.ndarray:
        """Total blend weight of each Gaussian over the image."""
        return np.bincount(self.gaussian, self.weight, minlength=self.num_gaussians)

    def entries(self, row: int, col: int) -> list[tuple[int, float]]:
        """(gaussian id, weight) pairs of one pixel, front to back."""
        sel = self.pixel == row * self.width + col
        return list(zip(self.gaussian[sel].tolist(), self.weight[sel].tolist()))


@dataclass(frozen=True, eq=False)
class BlendRecord:
    color: BlendWeights
    semantic: BlendWeights
    class_probs: np.ndarray
    pass_id: int

    @property
    def height(self) -> int:
        return self.color.height

    @property
    def width(self) -> int:
        return self.color.width

    @property
    def num_gaussians(self) -> int:
        return self.color.num_gaussians


@dataclass(frozen=True, eq=False)
class RenderedMaps:
    rgb: np.ndarray
    sem_probs: np.ndarray
    labels: np.ndarray
    depth: np.ndarray
    alpha_acc: np.ndarray
    sem_alpha_acc: np.ndarray
    pass_id: int


def _eigen_floor(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, floor)
    return (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def project_covariances(
    positions: np.ndarray,
    covariances: np.ndarray,
    cam: CameraView,
    config: RasterConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """EWA projection of world covariances.

    Returns pixel means (G, 2), floored 2D covariances (G, 2, 2), camera
    depths (G,) and a visibility mask (camera z above the near clip).
    """
    x_cam = positions @ cam.rotation.T + cam.translation
    z = x_cam[:, 2]
    visible = z > config.near_clip
    means, _ = project_many(positions, cam)
    zs = np.where(visible, z, 1.0)
    kp = cam.pixel_intrinsics
    fx, skew, fy = kp[0, 0], kp[0, 1], kp[1, 1]
    jac = np.zeros((len(positions), 2, 3))
    jac[:, 0, 0] = fx / zs
    jac[:, 0, 1] = skew / zs
    jac[:, 0, 2] = -(fx * x_cam[:, 0] + skew * x_cam[:, 1]) / zs**2
    jac[:, 1, 1] = fy / zs
    jac[:, 1, 2] = -fy * x_cam[:, 1] / zs**2
    t = jac @ cam.rotation
    cov2d = t @ covariances @ np.swapaxes(t, -1, -2)
    cov2d = _eigen_floor(cov2d, config.cov2d_floor)
    return means, cov2d, z, visible


def project_gaussian(
    g: DualGaussian,
    cam: CameraView,
    branch: str = "color",
    config: RasterConfig | None = None,
) -> ProjectedGaussian | None:
    """2D footprint of one Gaussian; None when it is culled by the near clip."""
    config = config or RasterConfig()
    if branch not in ("color", "semantic"):
        raise ValueError(f"branch must be 'color' or 'semantic', got {branch!r}")
    cov = g.color_covariance if branch == "color" else g.semantic_covariance
    _, cov2d, z, visible = project_covariances(g.position[None], cov[None], cam, config)
    if not visible[0]:
        return None
    mean, depth = project(g.position, cam)
    return ProjectedGaussian(np.asarray(mean), cov2d[0], depth)


def _tile_assignment(means, cov2d, order, width, height, config):
    """Sorted (tile id, gaussian id) pairs and per-tile offsets."""
    tile = config.tile_size
    ntx, nty = -(-width // tile), -(-height // tile)
    a, b, c = cov2d[order, 0, 0], cov2d[order, 0, 1], cov2d[order, 1, 1]
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = config.sigma_cutoff * np.sqrt(lam)
    u, v = means[order, 0], means[order, 1]
    keep = np.isfinite(u) & np.isfinite(v) & (u + radius >= 0) & (u - radius <= width) & (v + radius >= 0) & (v - radius <= height)
    order, u, v, radius = order[keep], u[keep], v[keep], radius[keep]
    tx0 = np.clip(np.floor((u - radius) / tile), 0, ntx - 1).astype(np.int64)
    tx1 = np.clip(np.floor((u + radius) / tile), 0, ntx - 1).astype(np.int64)
    ty0 = np.clip(np.floor((v - radius) / tile), 0, nty - 1).astype(np.int64)
    ty1 = np.clip(np.floor((v + radius) / tile), 0, nty - 1).astype(np.int64)
    nx = tx1 - tx0 + 1
    counts = nx * (ty1 - ty0 + 1)
    rep = np.repeat(np.arange(len(order)), counts)
    local = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
    tiles = (ty0[rep] + local // nx[rep]) * ntx + tx0[rep] + local % nx[rep]
    perm = np.argsort(tiles, kind="stable")
    tiles, gids = tiles[perm], order[rep][perm]
    bounds = np.searchsorted(tiles, np.arange(ntx * nty + 1))
    return gids, bounds, ntx, nty


def _composite(
    cam: CameraView,
    means: np.ndarray,
    cov2d: np.ndarray,
    depths: np.ndarray,
    visible: np.ndarray,
    opacities: np.ndarray,
    payload: np.ndarray,
    config: RasterConfig,
    threads: int,
) -> tuple[np.ndarray, BlendWeights]:
    """Front-to-back compositing; returns blended payload (C, H, W) and weights."""
    width, height = cam.width, cam.height
    g = len(opacities)
    channels = payload.shape[1]
    vis = np.flatnonzero(visible)
    order = vis[np.argsort(depths[vis], kind="stable")]
    conics = np.zeros_like(cov2d)
    if len(order):
        conics[order] = np.linalg.inv(cov2d[order])
    gids, bounds, ntx, nty = _tile_assignment(means, cov2d, order, width, height, config)
    tile = config.tile_size

    def run_tile(t: int):
        ids = gids[bounds[t] : bounds[t + 1]]
        if len(ids) == 0:
            return None
        ty, tx = divmod(t, ntx)
        rows = np.arange(ty * tile, min((ty + 1) * tile, height))
        cols = np.arange(tx * tile, min((tx + 1) * tile, width))
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        flat = (rr * width + cc).reshape(-1)
        px = np.stack([cc.reshape(-1) + 0.5, rr.reshape(-1) + 0.5], axis=1)
        trans = np.ones(len(flat))
        acc = np.zeros((len(flat), channels))
        parts = []
        for start in range(0, len(ids), config.chunk_size):
            if not np.any(trans >= config.min_transmittance):
                break
            chunk = ids[start : start + config.chunk_size]
            dx = px[:, None, 0] - means[chunk, 0][None]
            dy = px[:, None, 1] - means[chunk, 1][None]
            con = conics[chunk]
            power = -0.5 * (con[:, 0, 0] * dx * dx + 2.0 * con[:, 0, 1] * dx * dy + con[:, 1, 1] * dy * dy)
            a = np.clip(opacities[chunk] * np.exp(power), 0.0, config.alpha_max)
            keep = 1.0 - a
            front = trans[:, None] * np.concatenate([np.ones((len(flat), 1)), np.cumprod(keep, axis=1)[:, :-1]], axis=1)
            active = front >= config.min_transmittance
            w = np.where(active, a * front, 0.0)
            trans = trans * np.prod(np.where(active, keep, 1.0), axis=1)
            acc += w @ payload[chunk]
            pi, gi = np.nonzero(w > 0)
            parts.append((flat[pi], chunk[gi], w[pi, gi]))
        return flat, acc, parts

    tiles = range(ntx * nty)
    if threads > 1 and ntx * nty > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_tile, tiles))
    else:
        results = [run_tile(t) for t in tiles]

    out = np.zeros((height * width, channels))
    pix, gau, wts = [], [], []
    for res in results:
        if res is None:
            continue
        flat, acc, parts = res
        out[flat] = acc
        for p, gi, w in parts:
            pix.append(p)
            gau.append(gi)
            wts.append(w)
    weights = BlendWeights(
        pixel=np.concatenate(pix) if pix else np.zeros(0, dtype=np.int64),
        gaussian=np.concatenate(gau) if gau else np.zeros(0, dtype=np.int64),
        weight=np.concatenate(wts) if wts else np.zeros(0),
        height=height,
        width=width,
        num_gaussians=g,
    )
    return out.T.reshape(channels, height, width), weights


def render_label_map(sem_probs: np.ndarray, alpha_acc: np.ndarray, threshold: float = 1e-4) -> np.ndarray:
    """Argmax class per pixel (lowest index wins ties); ignore where alpha is tiny."""
    sem_probs = np.asarray(sem_probs)
    if sem_probs.shape[1:] != np.shape(alpha_acc):
        raise ShapeError(f"Probability map {sem_probs.shape} and alpha {np.shape(alpha_acc)} disagree")
    labels = np.argmax(sem_probs, axis=0).astype(np.int64)
    labels[np.asarray(alpha_acc) <= threshold] = IGNORE_LABEL
    return labels


def rasterize(
    gaussians: GaussianSet,
    cam: CameraView,
    size: tuple[int, int] | None = None,
    config: RasterConfig | None = None,
    threads: int | None = None,
) -> tuple[RenderedMaps, BlendRecord]:
    """Render RGB, class distributions, labels, depth and alpha.

    ``size`` is (width, height) and defaults to the camera resolution.
    """
    config = config or RasterConfig()
    config.validate()
    if size is not None and tuple(size) != (cam.width, cam.height):
        cam = cam.resized(*size)
    workers = resolve_threads(threads if threads is not None else config.threads)
    h, w = cam.height, cam.width
    pass_id = _next_pass_id()
    probs = softmax(gaussians.class_logits, axis=1)

    color = gaussians.color_view()
    means, cov2d, z, visible = project_covariances(color.positions, color.covariances(), cam, config)
    dirs = color.positions - cam.center
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    rgb_g = sh_to_rgb(color.payload, dirs)
    payload = np.concatenate([rgb_g, np.where(visible, z, 0.0)[:, None]], axis=1)
    color_out, color_w = _composite(cam, means, cov2d, z, visible, color.opacities, payload, config, workers)

    if gaussians.shares_semantic_covariance():
        sem_w = color_w
        sem_probs = color_w.blend(probs)
    else:
        sem = gaussians.semantic_view()
        s_means, s_cov, s_z, s_vis = project_covariances(sem.positions, sem.covariances(), cam, config)
        sem_probs, sem_w = _composite(cam, s_means, s_cov, s_z, s_vis, sem.opacities, probs, config, workers)

    alpha = color_w.alpha()
    sem_alpha = sem_w.alpha()
    depth_num = color_out[3]
    depth = np.where(alpha > config.alpha_threshold, depth_num / np.maximum(alpha, 1e-300), 0.0)
    maps = RenderedMaps(
        rgb=color_out[:3],
        sem_probs=sem_probs,
        labels=render_label_map(sem_probs, sem_alpha, config.alpha_threshold),
        depth=depth,
        alpha_acc=alpha,
        sem_alpha_acc=sem_alpha,
        pass_id=pass_id,
    )
    LOG.debug(
        "pass %d: %d Gaussians, %d visible, %d blend entries, %dx%d",
        pass_id, len(gaussians), int(visible.sum()), len(color_w.weight), w, h,
    )
    return maps, BlendRecord(color=color_w, semantic=sem_w, class_probs=probs, pass_id=pass_id)


class SemanticGradient(NamedTuple):
    probs: np.ndarray
    logits: np.ndarray


def _check_record(record: BlendRecord, grad: np.ndarray, channels: int | None, pass_id: int | None) -> None:
    if pass_id is not None and pass_id != record.pass_id:
        raise StaleRecordError(f"Record belongs to pass {record.pass_id}, not {pass_id}")
    if grad.ndim != 3 or grad.shape[1:] != (record.height, record.width):
        raise ShapeError(f"Gradient map {grad.shape} does not match a {record.height}x{record.width} render")
    if channels is not None and grad.shape[0] != channels:
        raise ShapeError(f"Gradient map has {grad.shape[0]} channels, expected {channels}")


def backprop_semantic(
    grad_out: np.ndarray,
    record: BlendRecord,
    class_logits: np.ndarray | None = None,
    pass_id: int | None = None,
) -> SemanticGradient:
    """Gradients w.r.t. each Gaussian's class distribution and logits.

    ``class_logits`` defaults to the logits the record was rendered with;
    logits of a different Gaussian count mean the record is stale.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if class_logits is None:
        q = record.class_probs
    else:
        class_logits = np.asarray(class_logits, dtype=np.float64)
        if class_logits.shape[0] != record.num_gaussians:
            raise StaleRecordError(
                f"Record covers {record.num_gaussians} Gaussians, logits cover {class_logits.shape[0]}"
            )
        q = softmax(class_logits, axis=1)
    _check_record(record, grad_out, q.shape[1], pass_id)
    grad_probs = record.semantic.scatter(grad_out)
    grad_logits = q * (grad_probs - np.sum(q * grad_probs, axis=1, keepdims=True))
    return SemanticGradient(grad_probs, grad_logits)


def backprop_color(grad_rgb: np.ndarray, record: BlendRecord, pass_id: int | None = None) -> np.ndarray:
    """Gradient of a loss w.r.t. each Gaussian's evaluated RGB (G, 3)."""
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64)
    _check_record(record, grad_rgb, 3, pass_id)
    return record.color.scatter(grad_rgb)
