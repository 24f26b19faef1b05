"""Plotting helpers for rendered maps, depth and fitting traces."""

from __future__ import annotations

from typing import Sequence

from matplotlib import colormaps
import numpy as np
import pandas as pd
import plotly.express as px

from src.config import IGNORE_LABEL


def label_palette(num_classes: int) -> np.ndarray:
    """(K, 3) uint8 colors from the tab20 colormap."""
    cmap = colormaps["tab20"]
    return np.array([np.rint(np.asarray(cmap(c % 20)[:3]) * 255) for c in range(num_classes)], dtype=np.uint8)


def colorize_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, W) labels -> (H, W, 3) uint8; ignore pixels are black."""
    labels = np.asarray(labels)
    palette = label_palette(num_classes)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    valid = labels != IGNORE_LABEL
    out[valid] = palette[labels[valid]]
    return out


def plot_rgb(rgb: np.ndarray, title: str = "Rendu RGB"):
    """Return a Plotly figure for a (3, H, W) image in [0, 1]."""
    img = np.rint(np.clip(np.moveaxis(np.asarray(rgb), 0, -1), 0, 1) * 255).astype(np.uint8)
    fig = px.imshow(img, title=title)
    fig.update_xaxes(showticklabels=False)
    fig.update_yaxes(showticklabels=False)
    return fig


def plot_labels(labels: np.ndarray, class_names: Sequence[str], title: str = "Carte semantique"):
    fig = px.imshow(colorize_labels(labels, len(class_names)), title=title)
    fig.update_xaxes(showticklabels=False)
    fig.update_yaxes(showticklabels=False)
    return fig


def plot_depth(depth: np.ndarray, title: str = "Profondeur"):
    depth = np.asarray(depth, dtype=np.float64)
    fig = px.imshow(np.where(depth > 0, depth, np.nan), color_continuous_scale="viridis", title=title)
    fig.update_layout(coloraxis_colorbar_title="z")
    return fig


def plot_loss_trace(trace: np.ndarray):
    """Return a Plotly figure for the objective over descent steps."""
    df = pd.DataFrame({"step": np.arange(len(trace)), "loss": np.asarray(trace)})
    if df.empty:
        raise ValueError("Empty loss trace")
    fig = px.line(df, x="step", y="loss", title="Courbe de perte")
    fig.update_layout(xaxis_title="Iteration", yaxis_title="Objectif")
    return fig


def plot_confusion(confusion: np.ndarray, class_names: Sequence[str]):
    fig = px.imshow(
        np.asarray(confusion),
        x=list(class_names),
        y=list(class_names),
        text_auto=True,
        color_continuous_scale="Blues",
        title="Matrice de confusion",
    )
    fig.update_layout(xaxis_title="Predit", yaxis_title="Verite terrain")
    return fig


def plot_iou_bars(table: pd.DataFrame):
    if "iou" not in table.columns or "class" not in table.columns:
        raise ValueError("Missing 'class'/'iou' columns in dataframe")
    fig = px.bar(table, x="class", y="iou", title="IoU par classe")
    fig.update_layout(yaxis_range=[0, 1])
    return fig
