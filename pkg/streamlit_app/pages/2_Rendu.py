from __future__ import annotations

import logging

import streamlit as st

from shared import require_bundle, run_pipeline
from src.losses.metrics import segmentation_metrics
from src.rapport.export import per_class_table
from src.visualisation.plots import plot_confusion, plot_depth, plot_iou_bars, plot_labels, plot_rgb

_logger = logging.getLogger(__name__)

bundle = require_bundle()
path = st.session_state["bundle_path"]

st.title("Rendu feed-forward")
st.caption("Vues d'entree -> gaussiennes duales -> nouvelle vue")

views = list(range(len(bundle)))
held_out = int(bundle.meta.get("held_out", len(bundle) // 2))
default_inputs = [v for v in views if v != held_out][:2]
cols = st.columns(4)
inputs = cols[0].multiselect("Vues d'entree", views, default=default_inputs)
target = cols[1].selectbox("Vue cible", views, index=held_out)
candidates = cols[2].select_slider("Candidats de profondeur", [16, 32, 64, 128], value=32)
decode_at = cols[3].radio("Decodage", ["pixels", "features"], horizontal=True)

if len(inputs) < 2:
    st.warning("Choisis au moins deux vues d'entree.")
    st.stop()

with st.spinner("Passe feed-forward..."):
    try:
        out = run_pipeline(path, tuple(sorted(inputs)), int(target), int(candidates), decode_at)
    except Exception as exc:
        _logger.exception("pipeline failed")
        st.error(f"Erreur pipeline: {exc}")
        st.stop()

backbone, depth, decode = out["timings"]
cols = st.columns(4)
cols[0].metric("Gaussiennes", f"{int(out['count'])}")
cols[1].metric("Backbone", f"{backbone:.2f} s")
cols[2].metric("Profondeur", f"{depth:.2f} s")
cols[3].metric("Decodage", f"{decode:.2f} s")

cols = st.columns(3)
cols[0].plotly_chart(plot_rgb(out["rgb"]), use_container_width=True)
cols[1].plotly_chart(plot_labels(out["labels"], bundle.class_names), use_container_width=True)
cols[2].plotly_chart(plot_depth(out["depth"]), use_container_width=True)

st.subheader("Evaluation")
if bundle.view(int(target)).labels is None:
    st.info("La vue cible n'a pas de verite terrain.")
    st.stop()
try:
    metrics = segmentation_metrics(bundle.label_map(int(target)), out["labels"], bundle.num_classes)
except Exception as exc:
    st.info(f"Evaluation impossible: {exc}")
    st.stop()

cols = st.columns(3)
cols[0].metric("mIoU", f"{metrics.miou:.3f}")
cols[1].metric("Precision", f"{metrics.acc:.3f}")
cols[2].metric("Precision par classe", f"{metrics.class_acc:.3f}")
table = per_class_table(metrics, bundle.class_names)
cols = st.columns(2)
cols[0].plotly_chart(plot_iou_bars(table), use_container_width=True)
cols[1].plotly_chart(plot_confusion(metrics.confusion, bundle.class_names), use_container_width=True)
st.dataframe(table, hide_index=True)
