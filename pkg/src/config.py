"""App configuration: environment settings and pipeline tunables."""

from __future__ import annotations

from dataclasses import dataclass, field
import os
from pathlib import Path

try:
    from dotenv import load_dotenv
except ImportError:  # pragma: no cover - optional dependency
    load_dotenv = None

from src.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]

if load_dotenv:
    load_dotenv(ROOT / ".env")
    load_dotenv(ROOT / ".env.local")

IGNORE_LABEL = 255
DECODE_MODES = ("pixels", "features")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class Settings:
    threads: int
    log_level: str
    data_dir: str
    seed: int


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"Env var {name} must be an integer, got {raw!r}") from exc


def get_settings() -> Settings:
    log_level = os.getenv("LOG_LEVEL", "INFO").strip().upper() or "INFO"
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"LOG_LEVEL must be one of {LOG_LEVELS}, got {log_level!r}")
    return Settings(
        threads=_int_env("SEMSPLAT_THREADS", 1),
        log_level=log_level,
        data_dir=os.getenv("DATA_DIR", "data"),
        seed=_int_env("SEMSPLAT_SEED", 0),
    )


def resolve_threads(requested: int | None = None) -> int:
    """Number of worker threads to use.

    ``None`` falls back to SEMSPLAT_THREADS; 0 means one per CPU.
    """
    n = get_settings().threads if requested is None else int(requested)
    if n < 0:
        raise ConfigError(f"Thread count must be >= 0, got {n}")
    if n == 0:
        n = os.cpu_count() or 1
    return n


@dataclass(frozen=True)
class LossConfig:
    lambda_sem: float = 0.1
    lambda_c: float = 1.0
    lambda_rs: float = 0.001
    prob_floor: float = 1e-8
    tie_eps: float = 1e-12
    fit_tie_eps: float = 1e-4

    def validate(self) -> None:
        for name in ("lambda_sem", "lambda_c", "lambda_rs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.prob_floor < 1:
            raise ConfigError(f"prob_floor must lie in (0, 1), got {self.prob_floor}")
        if self.tie_eps < 0 or self.fit_tie_eps < 0:
            raise ConfigError("tie tolerances must be >= 0")


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    sigma_cutoff: float = 3.0
    cov2d_floor: float = 0.3
    alpha_max: float = 0.999
    min_transmittance: float = 1e-4
    alpha_threshold: float = 1e-4
    near_clip: float = 0.01
    chunk_size: int = 256
    threads: int | None = None

    def validate(self) -> None:
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be >= 1, got {self.tile_size}")
        if self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 < self.alpha_max < 1:
            raise ConfigError(f"alpha_max must lie in (0, 1), got {self.alpha_max}")
        if self.sigma_cutoff <= 0 or self.cov2d_floor < 0 or self.near_clip <= 0:
            raise ConfigError("sigma_cutoff and near_clip must be > 0, cov2d_floor >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    d: int = 128
    num_candidates: int = 128
    near: float = 0.5
    far: float = 15.0
    num_classes: int = 20
    sh_degree: int = 1
    window_size: int = 8
    heads: int = 1
    ffn_expansion: int = 4
    color_blocks: int = 6
    semantic_blocks: int = 3
    rope_base: float = 10000.0
    decode_at: str = "pixels"
    raw_temperature: float = 0.02
    seed: int = 0
    shared_cnn: bool = True
    swin: bool = True
    camera_injection: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)

    @property
    def sh_coeffs(self) -> int:
        return (self.sh_degree + 1) ** 2

    def validate(self) -> "PipelineConfig":
        if self.d <= 0 or self.d % 8 != 0:
            raise ConfigError(f"d must be a positive multiple of 8, got {self.d}")
        if self.heads < 1 or self.d % self.heads != 0 or (self.d // self.heads) % 8 != 0:
            raise ConfigError(f"heads={self.heads} must split d={self.d} into multiples of 8")
        if self.num_candidates < 2:
            raise ConfigError(f"num_candidates must be >= 2, got {self.num_candidates}")
        if not 0 < self.near < self.far:
            raise ConfigError(f"need 0 < near < far, got near={self.near} far={self.far}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.sh_degree not in (0, 1, 2):
            raise ConfigError(f"sh_degree must be 0, 1 or 2, got {self.sh_degree}")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if self.ffn_expansion < 1 or self.color_blocks < 0 or self.semantic_blocks < 0:
            raise ConfigError("ffn_expansion must be >= 1 and block counts >= 0")
        if self.decode_at not in DECODE_MODES:
            raise ConfigError(f"decode_at must be one of {DECODE_MODES}, got {self.decode_at!r}")
        if self.raw_temperature <= 0:
            raise ConfigError(f"raw_temperature must be > 0, got {self.raw_temperature}")
        self.loss.validate()
        self.raster.validate()
        return self
