from __future__ import annotations

import streamlit as st

from shared import create_synthetic_bundle, list_bundles, render_sidebar

st.set_page_config(page_title="Semantic Splatting", layout="wide")

st.title("Semantic Splatting")
st.caption("Accueil")

selected = render_sidebar()

st.subheader("Etat")
col1, col2 = st.columns(2)
bundles = list_bundles()
if bundles:
    col1.write(f"✅ {len(bundles)} scene(s) disponible(s)")
else:
    col1.write("⛔ Aucune scene")
col2.write(f"Scene active: {selected or 'aucune'}")

st.subheader("Generer une scene synthetique")
cols = st.columns(4)
seed = cols[0].number_input("Graine", min_value=0, value=7, step=1)
classes = cols[1].number_input("Classes", min_value=2, max_value=20, value=6, step=1)
objects = cols[2].number_input("Objets", min_value=0, max_value=8, value=4, step=1)
resolution = cols[3].selectbox("Resolution", [32, 64, 96, 128], index=1)
if st.button("Generer"):
    with st.spinner("Generation en cours..."):
        try:
            out = create_synthetic_bundle(int(seed), int(classes), int(objects), int(resolution))
        except Exception as exc:
            st.error(f"Echec de la generation: {exc}")
        else:
            st.success(f"Scene ecrite dans {out}")
            st.rerun()

st.subheader("Actions")
cols = st.columns(2)
if cols[0].button("Voir la scene"):
    st.switch_page("pages/1_Scene.py")
if cols[1].button("Rendu feed-forward"):
    st.switch_page("pages/2_Rendu.py")

st.divider()

st.subheader("A propos")
st.markdown(
    """
### A propos (Architecture)
- **Backbone** → CNN partage puis deux branches transformer (couleur / semantique) avec attention camera
- **Profondeur** → plane sweep sur les features, raffinement U-Net, regression par esperance
- **Gaussiennes duales** → une paire par pixel: position/opacite partagees, attributs couleur et semantique separes
- **Rendu** → splatting par tuiles, compositing avant-arriere
- **Scenes** → bundles JSON + PPM/PGM generes de facon procedurale
"""
)
