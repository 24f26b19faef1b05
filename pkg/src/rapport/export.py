"""Report generation helpers (key=value text, CSV and HTML)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from src.losses.metrics import SegmentationMetrics


def report_lines(metrics: SegmentationMetrics | None = None, extra: Mapping[str, object] | None = None) -> list[str]:
    """Structured text for harness parsing: one ``key=value`` per line."""
    lines = [] if metrics is None else metrics.report_lines()
    for key, value in (extra or {}).items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key}={value}")
    return lines


def per_class_table(metrics: SegmentationMetrics, class_names: Sequence[str] | None = None) -> pd.DataFrame:
    """One row per class: IoU, recall and pixel counts from the confusion matrix."""
    conf = metrics.confusion
    k = conf.shape[0]
    names = list(class_names) if class_names is not None else [f"class_{c}" for c in range(k)]
    if len(names) != k:
        raise ValueError(f"{len(names)} class names for {k} classes")
    tp = np.diag(conf)
    gt = metrics.gt_pixels
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(gt > 0, tp / gt, np.nan)
    return pd.DataFrame(
        {
            "class": names,
            "iou": metrics.iou,
            "recall": recall,
            "gt_pixels": gt,
            "pred_pixels": conf.sum(axis=0),
            "unlabeled": metrics.unlabeled,
        }
    )


def export_csv_report(df: pd.DataFrame, output_path: str | Path) -> None:
    Path(output_path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(output_path, index=False, float_format="%.6f")


def export_html_report(df: pd.DataFrame, output_path: str | Path, summary: Mapping[str, object] | None = None) -> None:
    """Standalone HTML page with an optional summary list and the table."""
    items = "".join(f"<li><b>{k}</b>: {v}</li>" for k, v in (summary or {}).items())
    html = (
        "<!DOCTYPE html>\n<html><head><meta charset='utf-8'><title>Rapport de segmentation</title></head><body>\n"
        "<h1>Rapport de segmentation</h1>\n"
        + (f"<ul>{items}</ul>\n" if items else "")
        + df.to_html(index=False, float_format=lambda x: f"{x:.4f}", na_rep="-")
        + "\n</body></html>\n"
    )
    Path(output_path).parent.mkdir(parents=True, exist_ok=True)
    Path(output_path).write_text(html, encoding="utf-8")
