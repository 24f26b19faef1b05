"""Central-difference checks of the analytic gradients.

Each suite returns the max relative error between analytic and numeric
gradients, relative to the largest numeric entry.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from src.config import LossConfig
from src.gaussians.model import GaussianSet
from src.gaussians.sh import C0, rgb_to_dc
from src.geometry.cameras import CameraView
from src.geometry.rotations import random_rotation, matrix_to_quaternion
from src.losses.fitting import SupervisedView, render_records, semantic_objective
from src.losses.objectives import LabelMap, color_mse, regional_smoothness, sem_ce
from src.rendering.rasterizer import backprop_color, backprop_semantic, rasterize

LOG = logging.getLogger("semsplat.gradcheck")

GRAD_TOL = 1e-4


def finite_difference(func: Callable[[np.ndarray], float], x0: np.ndarray, eps: float = 1e-6, index=None) -> np.ndarray:
    """Centered-difference gradient of ``func`` at ``x0``.

    ``index`` restricts the check to a subset of flat coordinates; the
    other entries are left at 0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    flat = x0.reshape(-1)
    grad = np.zeros_like(flat)
    coords = range(flat.size) if index is None else np.asarray(index).reshape(-1)
    for j in coords:
        x = flat.copy()
        x[j] = flat[j] + eps
        fplus = func(x.reshape(x0.shape))
        x[j] = flat[j] - eps
        fminus = func(x.reshape(x0.shape))
        grad[j] = (fplus - fminus) / (2 * eps)
    return grad.reshape(x0.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, mask: np.ndarray | None = None) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if mask is not None:
        a, n = a[mask], n[mask]
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(n))), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def _random_labels(rng: np.random.Generator, k: int, h: int, w: int, ignore_frac: float = 0.1) -> LabelMap:
    # blocky regions so smoothness pairs exist
    coarse = rng.integers(0, k, size=(-(-h // 3), -(-w // 3)))
    labels = np.kron(coarse, np.ones((3, 3), dtype=np.int64))[:h, :w]
    labels[rng.random((h, w)) < ignore_frac] = 255
    return LabelMap(labels, k)


def _random_probs(rng: np.random.Generator, k: int, h: int, w: int) -> np.ndarray:
    raw = rng.uniform(0.1, 1.0, size=(k, h, w))
    return 0.9 * raw / raw.sum(axis=0, keepdims=True)


def check_sem_ce(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    gt = _random_labels(rng, 3, 6, 7)
    pred = _random_probs(rng, 3, 6, 7)
    analytic = sem_ce(gt, pred).grad
    numeric = finite_difference(lambda p: sem_ce(gt, p).value, pred)
    return relative_error(analytic, numeric)


def check_color_mse(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    gt = rng.random((3, 5, 6))
    pred = rng.random((3, 5, 6))
    analytic = color_mse(gt, pred).grad
    numeric = finite_difference(lambda p: color_mse(gt, p).value, pred)
    return relative_error(analytic, numeric)


def check_regional_smoothness(seed: int = 0, eps: float = 1e-6) -> float:
    """Coordinates whose pairs sit near a kink (|difference| < 100 eps) are skipped."""
    rng = np.random.default_rng(seed)
    gt = _random_labels(rng, 3, 7, 6)
    pred = _random_probs(rng, 3, 7, 6)
    analytic = regional_smoothness(gt, pred).grad
    numeric = finite_difference(lambda p: regional_smoothness(gt, p).value, pred, eps=eps)
    kink = np.zeros(pred.size, dtype=bool)
    flat = pred.reshape(3, -1)
    h, w = gt.shape
    idx = np.arange(h * w).reshape(h, w)
    for a, b in ((idx[:-1, :], idx[1:, :]), (idx[:, :-1], idx[:, 1:])):
        a, b = a.reshape(-1), b.reshape(-1)
        near = np.abs(flat[:, b] - flat[:, a]) < 100 * eps
        for c in range(3):
            kink[c * h * w + a[near[c]]] = True
            kink[c * h * w + b[near[c]]] = True
    return relative_error(analytic, numeric, ~kink.reshape(pred.shape))


def toy_gaussians(seed: int = 0, count: int = 3, num_classes: int = 3) -> tuple[GaussianSet, CameraView]:
    """A few overlapping Gaussians in front of a 16x16 identity camera."""
    rng = np.random.default_rng(seed)
    cam = CameraView.look_at(np.zeros(3), np.array([0.0, 0.0, 1.0]), 16, 16, fx=1.0, fy=1.0, down=(0.0, 1.0, 0.0))
    positions = np.column_stack([rng.uniform(-0.15, 0.15, count), rng.uniform(-0.15, 0.15, count), rng.uniform(2.0, 3.0, count)])
    scales = rng.uniform(0.08, 0.2, size=(count, 3))
    rotations = np.stack([matrix_to_quaternion(random_rotation(rng)) for _ in range(count)])
    sh = np.zeros((count, 3, 1))
    sh[:, :, 0] = rgb_to_dc(rng.random((count, 3)))
    gaussians = GaussianSet(
        positions=positions,
        opacities=rng.uniform(0.4, 0.9, count),
        color_scales=scales,
        color_rotations=rotations,
        sh_coeffs=sh,
        sem_scales=scales * rng.uniform(0.8, 1.2, size=(count, 3)),
        sem_rotations=rotations,
        class_logits=rng.normal(size=(count, num_classes)),
    )
    return gaussians, cam


def check_backprop_semantic(seed: int = 0) -> float:
    """Logit gradient of <G, sem_probs> against full re-rasterization."""
    gaussians, cam = toy_gaussians(seed)
    rng = np.random.default_rng(seed + 1)
    maps, record = rasterize(gaussians, cam, threads=1)
    weights = rng.normal(size=maps.sem_probs.shape)
    analytic = backprop_semantic(weights, record).logits

    def f(logits):
        out, _ = rasterize(gaussians.with_class_logits(logits), cam, threads=1)
        return float(np.sum(weights * out.sem_probs))

    numeric = finite_difference(f, gaussians.class_logits)
    return relative_error(analytic, numeric)


def check_backprop_color(seed: int = 0) -> float:
    """RGB gradient of <G, rgb> by perturbing the DC band of each Gaussian."""
    gaussians, cam = toy_gaussians(seed)
    rng = np.random.default_rng(seed + 2)
    maps, record = rasterize(gaussians, cam, threads=1)
    weights = rng.normal(size=maps.rgb.shape)
    analytic = backprop_color(weights, record)

    def f(rgb):
        sh = gaussians.sh_coeffs.copy()
        sh[:, :, 0] = rgb_to_dc(rgb)
        moved = GaussianSet(
            gaussians.positions, gaussians.opacities, gaussians.color_scales, gaussians.color_rotations,
            sh, gaussians.sem_scales, gaussians.sem_rotations, gaussians.class_logits,
        )
        out, _ = rasterize(moved, cam, threads=1)
        return float(np.sum(weights * out.rgb))

    base = gaussians.sh_coeffs[:, :, 0] * C0 + 0.5
    numeric = finite_difference(f, base)
    return relative_error(analytic, numeric)


def check_fit_objective(seed: int = 0, samples: int = 10) -> float:
    """Total semantic objective gradient on ``samples`` random logits."""
    gaussians, cam = toy_gaussians(seed, count=6)
    target = gaussians.with_class_logits(np.random.default_rng(seed + 3).normal(size=gaussians.class_logits.shape) * 3)
    maps, _ = rasterize(target, cam, threads=1)
    views = [SupervisedView(cam, LabelMap(maps.labels, gaussians.num_classes))]
    records = render_records(gaussians, views)
    config = LossConfig()
    _, analytic = semantic_objective(gaussians.class_logits, records, views, config, tie_eps=0.0)
    index = np.random.default_rng(seed + 4).choice(gaussians.class_logits.size, size=samples, replace=False)
    numeric = finite_difference(
        lambda l: semantic_objective(l, records, views, config, tie_eps=0.0)[0], gaussians.class_logits, index=index
    )
    mask = np.zeros(gaussians.class_logits.size, dtype=bool)
    mask[index] = True
    return relative_error(analytic, numeric, mask.reshape(analytic.shape))


SUITES: dict[str, Callable[[int], float]] = {
    "sem_ce": check_sem_ce,
    "color_mse": check_color_mse,
    "regional_smoothness": check_regional_smoothness,
    "backprop_semantic": check_backprop_semantic,
    "backprop_color": check_backprop_color,
    "fit_objective": check_fit_objective,
}


def run_all(seed: int = 0) -> dict[str, float]:
    results = {}
    for name, suite in SUITES.items():
        results[name] = suite(seed)
        LOG.info("gradcheck %s: max rel err %.3e", name, results[name])
    return results
