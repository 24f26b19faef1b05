from __future__ import annotations

import numpy as np
import pytest

from src.config import PipelineConfig
from src.synth.scenes import generate_room


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> PipelineConfig:
    return PipelineConfig(
        d=16,
        num_candidates=8,
        near=1.0,
        far=6.0,
        num_classes=6,
        window_size=4,
        color_blocks=1,
        semantic_blocks=1,
        ffn_expansion=2,
    ).validate()


@pytest.fixture(scope="session")
def room():
    return generate_room(7, num_classes=6)
