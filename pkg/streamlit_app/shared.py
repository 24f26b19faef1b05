from __future__ import annotations

from pathlib import Path
import sys

import numpy as np
import streamlit as st

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.config import PipelineConfig, get_settings  # noqa: E402
from src.ingestion.bundle import SceneBundle, bundle_from_scene, load_bundle, save_bundle  # noqa: E402
from src.pipeline.feed_forward import forward_with_intermediates, render_novel  # noqa: E402
from src.synth.scenes import generate_room  # noqa: E402


def data_dir() -> Path:
    return ROOT / get_settings().data_dir


def list_bundles() -> list[Path]:
    base = data_dir()
    if not base.exists():
        return []
    return sorted(p.parent for p in base.glob("*/manifest.json"))


@st.cache_resource(show_spinner=False)
def cached_bundle(path: str) -> SceneBundle:
    return load_bundle(path)


def create_synthetic_bundle(seed: int, classes: int, objects: int, resolution: int) -> Path:
    scene = generate_room(seed, classes, objects, resolution)
    out = data_dir() / f"room_s{seed}_k{classes}"
    save_bundle(bundle_from_scene(scene), out)
    cached_bundle.clear()
    return out


@st.cache_data(show_spinner=False)
def run_pipeline(path: str, inputs: tuple[int, ...], target: int, candidates: int, decode_at: str) -> dict[str, np.ndarray]:
    bundle = cached_bundle(path)
    config = PipelineConfig(
        num_candidates=candidates,
        near=bundle.near,
        far=bundle.far,
        num_classes=bundle.num_classes,
        decode_at=decode_at,
        seed=get_settings().seed,
    )
    out = forward_with_intermediates(bundle.images(inputs), bundle.cameras(inputs), config)
    maps = render_novel(out.gaussians, bundle.view(target).camera, config)
    return {
        "rgb": maps.rgb,
        "labels": maps.labels,
        "depth": maps.depth,
        "alpha": maps.alpha_acc,
        "count": np.array(len(out.gaussians)),
        "timings": np.array([out.timings[k] for k in ("backbone", "depth", "decode")]),
    }


def render_sidebar() -> str | None:
    """Bundle picker; returns the selected bundle path."""
    st.sidebar.header("Scenes")
    bundles = list_bundles()
    if not bundles:
        st.sidebar.info("Aucune scene. Genere une scene synthetique depuis l'accueil.")
        return None
    names = [b.name for b in bundles]
    choice = st.sidebar.selectbox("Scene", names, index=len(names) - 1)
    st.session_state["bundle_path"] = str(bundles[names.index(choice)])
    return st.session_state["bundle_path"]


def require_bundle() -> SceneBundle:
    path = render_sidebar()
    if path is None:
        st.warning("Selectionne ou genere une scene pour continuer.")
        st.stop()
    try:
        return cached_bundle(path)
    except Exception as exc:
        st.error(f"Scene illisible: {exc}")
        st.stop()
