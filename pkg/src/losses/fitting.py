"""Descent on class logits against supervised label maps.

Geometry is frozen: each view is rasterized once and its blend record is
re-used to re-blend the class distributions at every step. Only the
semantic terms of the objective (cross-entropy and regional smoothness)
depend on the logits.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np

from src.config import LossConfig, RasterConfig
from src.errors import EmptyInputError, ShapeError
from src.gaussians.model import GaussianSet, softmax
from src.geometry.cameras import CameraView
from src.losses.objectives import LabelMap, regional_smoothness, sem_ce
from src.rendering.rasterizer import BlendRecord, backprop_semantic, rasterize

LOG = logging.getLogger("semsplat.fitting")

MAX_HALVINGS = 12
MAX_GROWTH = 1.05
MAX_LOGIT_STEP = 1.0
PRECOND_FLOOR = 1e-12


@dataclass(frozen=True)
class SupervisedView:
    camera: CameraView
    labels: LabelMap


@dataclass(frozen=True, eq=False)
class FitResult:
    gaussians: GaussianSet
    trace: np.ndarray
    step_sizes: np.ndarray

    @property
    def initial_loss(self) -> float:
        return float(self.trace[0])

    @property
    def final_loss(self) -> float:
        return float(self.trace[-1])


def semantic_objective(
    logits: np.ndarray,
    records: Sequence[BlendRecord],
    views: Sequence[SupervisedView],
    config: LossConfig | None = None,
    tie_eps: float | None = None,
) -> tuple[float, np.ndarray]:
    """Sum over views of lambda_sem * CE + lambda_rs * RS, and its logit gradient."""
    config = config or LossConfig()
    probs = softmax(logits, axis=1)
    value = 0.0
    grad = np.zeros_like(logits)
    for record, view in zip(records, views):
        pred = record.semantic.blend(probs)
        ce = sem_ce(view.labels, pred, config)
        rs = regional_smoothness(view.labels, pred, config, tie_eps=tie_eps)
        value += config.lambda_sem * ce.value + config.lambda_rs * rs.value
        pix_grad = config.lambda_sem * ce.grad + config.lambda_rs * rs.grad
        grad += backprop_semantic(pix_grad, record, logits).logits
    return value, grad


def render_records(
    gaussians: GaussianSet,
    views: Sequence[SupervisedView],
    raster: RasterConfig | None = None,
) -> list[BlendRecord]:
    """Rasterize every supervised view once; views must match the label map size."""
    records = []
    for view in views:
        h, w = view.labels.shape
        if (view.camera.height, view.camera.width) != (h, w):
            raise ShapeError(f"Camera is {view.camera.width}x{view.camera.height}, labels are {w}x{h}")
        _, record = rasterize(gaussians, view.camera, config=raster)
        records.append(record)
    return records


def _preconditioner(records: Sequence[BlendRecord], views: Sequence[SupervisedView], config: LossConfig) -> np.ndarray:
    diag = np.full(records[0].num_gaussians, PRECOND_FLOOR)
    for record, view in zip(records, views):
        n = int(view.labels.valid.sum())
        diag += record.semantic.coverage() * (config.lambda_sem / n + config.lambda_rs)
    return diag


def fit_semantic_logits(
    gaussians: GaussianSet,
    views: Sequence[SupervisedView],
    steps: int = 200,
    step_size: float = 0.5,
    config: LossConfig | None = None,
    raster: RasterConfig | None = None,
) -> FitResult:
    """Gradient descent on class_logits only.

    Steps are scaled by each Gaussian's blend coverage, clipped per logit,
    and halved until the objective grows by at most 5%.
    """
    config = config or LossConfig()
    config.validate()
    usable = [v for v in views if np.any(v.labels.valid)]
    if len(usable) < len(views):
        LOG.warning("skipping %d views without labeled pixels", len(views) - len(usable))
    if not usable:
        raise EmptyInputError("fit_semantic_logits needs at least one labeled view")
    records = render_records(gaussians, usable, raster)
    precond = _preconditioner(records, usable, config)
    tie = config.fit_tie_eps

    logits = gaussians.class_logits.copy()
    f, g = semantic_objective(logits, records, usable, config, tie)
    trace = [f]
    etas = []
    for step in range(steps):
        eta = step_size
        for _ in range(MAX_HALVINGS + 1):
            trial = logits + np.clip(-eta * g / precond[:, None], -MAX_LOGIT_STEP, MAX_LOGIT_STEP)
            f_trial, g_trial = semantic_objective(trial, records, usable, config, tie)
            if f_trial <= MAX_GROWTH * f:
                logits, f, g = trial, f_trial, g_trial
                break
            eta *= 0.5
        else:
            LOG.debug("step %d: no acceptable step size, keeping logits", step)
            eta = 0.0
        trace.append(f)
        etas.append(eta)
    LOG.info("fit %d views, %d steps: loss %.6g -> %.6g", len(usable), steps, trace[0], trace[-1])
    return FitResult(gaussians.with_class_logits(logits), np.asarray(trace), np.asarray(etas))
