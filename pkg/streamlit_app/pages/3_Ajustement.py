from __future__ import annotations

import numpy as np
import streamlit as st

import shared  # noqa: F401  (adds the repo root to sys.path)
from src.losses.fitting import fit_semantic_logits
from src.losses.metrics import segmentation_metrics
from src.rendering.rasterizer import rasterize
from src.synth.scenes import generate_room
from src.visualisation.plots import plot_labels, plot_loss_trace


@st.cache_data(show_spinner=False)
def _fit(seed: int, steps: int, step_size: float):
    scene = generate_room(seed, num_classes=3, n_objects=2)
    start = scene.gaussians.with_class_logits(np.zeros_like(scene.gaussians.class_logits))
    result = fit_semantic_logits(start, scene.supervised_views(), steps=steps, step_size=step_size)
    cam = scene.cameras[scene.held_out]
    maps, _ = rasterize(result.gaussians, cam)
    metrics = segmentation_metrics(scene.labels[scene.held_out], maps.labels, scene.num_classes)
    return result.trace, maps.labels, scene.labels[scene.held_out].labels, scene.class_names, metrics.miou


st.title("Ajustement semantique")
st.caption("Descente sur les logits de classe, geometrie figee")

cols = st.columns(3)
seed = cols[0].number_input("Graine", min_value=0, value=7, step=1)
steps = cols[1].slider("Iterations", 10, 400, 200, step=10)
step_size = cols[2].select_slider("Pas", [0.1, 0.25, 0.5, 1.0], value=0.5)

if st.button("Lancer"):
    with st.spinner("Ajustement en cours..."):
        trace, pred, gt, names, miou = _fit(int(seed), int(steps), float(step_size))
    st.metric("mIoU vue de test", f"{miou:.3f}")
    st.plotly_chart(plot_loss_trace(trace), use_container_width=True)
    cols = st.columns(2)
    cols[0].plotly_chart(plot_labels(gt, names, title="Verite terrain"), use_container_width=True)
    cols[1].plotly_chart(plot_labels(pred, names, title="Prediction"), use_container_width=True)
