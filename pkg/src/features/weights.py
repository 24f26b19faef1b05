"""Seeded network parameters: the full model as one ``nn.Module``."""

from __future__ import annotations

from collections import OrderedDict
import copy
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

from src.config import PipelineConfig
from src.errors import ConfigError, NonFiniteError, ShapeError
from src.features.layers import (
    DepthRefiner,
    GaussianHead,
    OpacityHead,
    ResidualCNN,
    SemanticRefiner,
    TransformerStack,
)
from src.ingestion.snapshots import read_snapshot, write_snapshot

LOG = logging.getLogger("semsplat.weights")


def head_widths(config: PipelineConfig) -> dict[str, int]:
    d = config.d
    return {"unet": max(8, d // 2), "opacity": max(8, d // 4), "head": max(16, d // 2)}


class SemsplatNetwork(nn.Module):
    """Every learned layer of the feed-forward pass.

    ``sem_lowcnn`` exists only when the semantic branch has its own CNN.
    """

    def __init__(self, config: PipelineConfig):
        super().__init__()
        d, L, K = config.d, config.num_candidates, config.num_classes
        widths = head_widths(config)
        self.cnn = ResidualCNN(d)
        self.sem_lowcnn = None if config.shared_cnn else ResidualCNN(d)
        self.sem_cnn = SemanticRefiner(d)
        self.color = TransformerStack(d, config.color_blocks, config.ffn_expansion)
        self.semantic = TransformerStack(d, config.semantic_blocks, config.ffn_expansion)
        self.depth = DepthRefiner(L, d, widths["unet"])
        self.opacity = OpacityHead(L, widths["opacity"])
        self.color_head = GaussianHead(3 + d, widths["head"], 3 * config.sh_coeffs + 7)
        self.semantic_head = GaussianHead(3 + d, widths["head"], K + 7)


def weight_layout(config: PipelineConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Parameter name -> shape for a pipeline configuration."""
    net = SemsplatNetwork(config.validate())
    return OrderedDict((k, tuple(v.shape)) for k, v in net.state_dict().items())


@dataclass(frozen=True, eq=False)
class NetworkWeights:
    """A network plus optional per-tensor overrides.

    Overrides replace parameters at call time through ``functional_call``
    without copying, so gradients reach the override tensor.
    """

    net: SemsplatNetwork
    seed: int
    overrides: Mapping[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, t in self.tensors.items():
            if not torch.isfinite(t).all():
                raise NonFiniteError(f"Weight tensor {name} has non-finite entries")

    @property
    def tensors(self) -> "OrderedDict[str, torch.Tensor]":
        state = self.net.state_dict()
        return OrderedDict((k, self.overrides.get(k, v)) for k, v in state.items())

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    @property
    def layout(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.tensors.items()}

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def call(self, path: str, *args, **kwargs):
        """Run the submodule at ``path`` (``""`` for the whole network)."""
        module = self.net.get_submodule(path)
        prefix = f"{path}." if path else ""
        params = {k[len(prefix):]: v for k, v in self.overrides.items() if k.startswith(prefix)}
        if not params:
            return module(*args, **kwargs)
        return functional_call(module, params, args, kwargs)

    def _rebuilt(self, fn: Callable[[str, torch.Tensor], torch.Tensor]) -> "NetworkWeights":
        net = copy.deepcopy(self.net)
        current = self.tensors
        with torch.no_grad():
            for name, p in net.named_parameters():
                p.copy_(fn(name, current[name].detach()))
        return NetworkWeights(net, self.seed)

    def zeroed(self, *prefixes: str) -> "NetworkWeights":
        """Copy with every tensor under the given name prefixes set to zero."""
        return self._rebuilt(lambda k, v: torch.zeros_like(v) if k.startswith(prefixes) else v)

    def without_bias(self) -> "NetworkWeights":
        return self._rebuilt(lambda k, v: torch.zeros_like(v) if k.endswith(".bias") else v)

    def with_tensor(self, name: str, value: torch.Tensor) -> "NetworkWeights":
        current = self.tensors
        if name not in current:
            raise KeyError(name)
        if tuple(value.shape) != tuple(current[name].shape):
            raise ShapeError(f"{name}: expected shape {tuple(current[name].shape)}, got {tuple(value.shape)}")
        return NetworkWeights(self.net, self.seed, {**self.overrides, name: value})

    def to(self, dtype: torch.dtype) -> "NetworkWeights":
        net = copy.deepcopy(self.net).to(dtype)
        return NetworkWeights(net, self.seed, {k: v.to(dtype) for k, v in self.overrides.items()})


def build_network(config: PipelineConfig, dtype: torch.dtype = torch.float32) -> SemsplatNetwork:
    net = SemsplatNetwork(config.validate()).to(dtype)
    net.requires_grad_(False)
    return net.eval()


def init_weights(seed: int, config: PipelineConfig | None = None, dtype: torch.dtype = torch.float32) -> NetworkWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, drawn from ``seed``."""
    config = (config or PipelineConfig()).validate()
    net = build_network(config, dtype)
    gen = torch.Generator().manual_seed(int(seed))
    count = 0
    with torch.no_grad():
        for module in net.modules():
            if not isinstance(module, (nn.Conv2d, nn.Linear)):
                continue
            bound = 1.0 / math.sqrt(module.weight[0].numel())
            for p in (module.weight, module.bias):
                t = torch.rand(p.shape, generator=gen, dtype=torch.float64) * (2 * bound) - bound
                p.copy_(t.to(dtype))
                count += p.numel()
    LOG.debug("initialized %d parameters from seed %d", count, seed)
    return NetworkWeights(net, int(seed))


def check_layout(weights: NetworkWeights, config: PipelineConfig) -> None:
    expected = dict(weight_layout(config))
    if weights.layout != expected:
        missing = sorted(set(expected) - set(weights.layout))
        extra = sorted(set(weights.layout) - set(expected))
        raise ConfigError(f"Weights do not match configuration (missing={missing[:3]}, extra={extra[:3]})")


def save_weights(weights: NetworkWeights, prefix: str | Path) -> None:
    write_snapshot(
        prefix,
        OrderedDict((k, v.detach().cpu().numpy()) for k, v in weights.tensors.items()),
        meta={"kind": "weights", "seed": str(weights.seed)},
    )


def load_weights(prefix: str | Path, config: PipelineConfig | None = None, dtype: torch.dtype = torch.float32) -> NetworkWeights:
    """Snapshot blocks loaded into a network built for ``config``."""
    config = (config or PipelineConfig()).validate()
    blocks, meta = read_snapshot(prefix)
    net = build_network(config, dtype)
    state = OrderedDict((k, torch.as_tensor(np.asarray(v), dtype=dtype)) for k, v in blocks.items())
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ConfigError(f"Weight snapshot {prefix} does not match the configuration: {exc}") from exc
    weights = NetworkWeights(net, int(meta.get("seed", 0)))
    LOG.info("loaded %d weight tensors from %s", len(state), prefix)
    return weights
