from __future__ import annotations

import numpy as np
import streamlit as st

from shared import require_bundle
from src.ingestion.importer import dequantize_image
from src.visualisation.plots import plot_depth, plot_labels, plot_rgb

bundle = require_bundle()

st.title("Scene")
st.caption("Vues, cartes semantiques et profondeurs de verite terrain")

cols = st.columns(4)
cols[0].metric("Vues", f"{len(bundle)}")
cols[1].metric("Classes", f"{bundle.num_classes}")
cols[2].metric("Near", f"{bundle.near:.2f}")
cols[3].metric("Far", f"{bundle.far:.2f}")

index = st.slider("Vue", 0, len(bundle) - 1, int(bundle.meta.get("held_out", 0)))
view = bundle.view(index)

cols = st.columns(3)
cols[0].plotly_chart(plot_rgb(dequantize_image(view.image), title=f"Image {view.name}"), use_container_width=True)
if view.labels is not None:
    cols[1].plotly_chart(plot_labels(view.labels, bundle.class_names), use_container_width=True)
else:
    cols[1].info("Pas de carte semantique.")
if view.depth is not None:
    cols[2].plotly_chart(plot_depth(bundle.depth_map(index)), use_container_width=True)
else:
    cols[2].info("Pas de profondeur.")

st.subheader("Classes")
if view.labels is not None:
    counts = np.bincount(view.labels.reshape(-1), minlength=256)
    st.dataframe(
        {"classe": bundle.class_names, "pixels": [int(counts[c]) for c in range(bundle.num_classes)]},
        hide_index=True,
    )
