"""Camera-aware attention.

Every token carries a geometric transform G = diag(I ⊗ P, RoPE(x), RoPE(y))
built from its view's projective matrix P and its patch-grid coordinates.
Queries are modulated by G^T and keys/values by G^-1 so that attention
scores only depend on relative camera geometry and relative position.

G is never materialized in the hot path: the projective part acts on
4-channel chunks and the rotary part on channel pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import NonFiniteError, ShapeError, ValidationError
from src.geometry.cameras import CameraView, ProjectiveMatrix, build_projective

LOG = logging.getLogger("semsplat.attention")

ROPE_BASE = 10000.0


def rope_matrix(position: float, dim: int, base: float = ROPE_BASE) -> np.ndarray:
    """Block-diagonal 2x2 rotations with angles position * base^(-2k/dim)."""
    if dim <= 0 or dim % 2 != 0:
        raise ValidationError(f"Rotary dimension must be a positive even integer, got {dim}")
    out = np.zeros((dim, dim))
    angles = position * base ** (-2.0 * np.arange(dim // 2) / dim)
    for k, a in enumerate(angles):
        c, s = math.cos(a), math.sin(a)
        out[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = [[c, -s], [s, c]]
    return out


@dataclass(frozen=True, eq=False)
class TokenTransform:
    """Dense per-token transform; used for inspection and reference checks."""

    g: np.ndarray
    projective: ProjectiveMatrix
    x: float
    y: float
    base: float = ROPE_BASE

    @property
    def d(self) -> int:
        return self.g.shape[0]

    @property
    def proj_block(self) -> np.ndarray:
        return self.g[: self.d // 2, : self.d // 2]

    @property
    def rope_block(self) -> np.ndarray:
        return self.g[self.d // 2 :, self.d // 2 :]

    def inverse(self) -> np.ndarray:
        """G^-1 assembled blockwise from the closed-form P^-1 and R^T."""
        d = self.d
        out = np.zeros((d, d))
        out[: d // 2, : d // 2] = np.kron(np.eye(d // 8), self.projective.inverse().m)
        out[d // 2 :, d // 2 :] = self.rope_block.T
        return out


def build_token_transform(
    coords: tuple[float, float],
    projective: ProjectiveMatrix,
    d: int,
    base: float = ROPE_BASE,
) -> TokenTransform:
    if d <= 0 or d % 8 != 0:
        raise ValidationError(f"Token dimension must be a positive multiple of 8, got {d}")
    x, y = coords
    g = np.zeros((d, d))
    g[: d // 2, : d // 2] = np.kron(np.eye(d // 8), projective.m)
    q = d // 4
    g[d // 2 : d // 2 + q, d // 2 : d // 2 + q] = rope_matrix(x, q, base)
    g[d // 2 + q :, d // 2 + q :] = rope_matrix(y, q, base)
    return TokenTransform(g=g, projective=projective, x=float(x), y=float(y), base=base)


@dataclass(frozen=True)
class TransformBatch:
    """Structured token transforms; every field broadcasts to (..., T)."""

    proj: torch.Tensor
    proj_inv: torch.Tensor
    x: torch.Tensor
    y: torch.Tensor
    base: float = ROPE_BASE

    @classmethod
    def from_tokens(cls, tokens: Sequence[TokenTransform], dtype: torch.dtype = torch.float64) -> "TransformBatch":
        if not tokens:
            raise ValidationError("Need at least one token transform")
        bases = {t.base for t in tokens}
        if len(bases) != 1:
            raise ValidationError(f"Token transforms mix rotary bases: {sorted(bases)}")
        return cls(
            proj=torch.as_tensor(np.stack([t.projective.m for t in tokens]), dtype=dtype),
            proj_inv=torch.as_tensor(np.stack([t.projective.inverse().m for t in tokens]), dtype=dtype),
            x=torch.as_tensor([t.x for t in tokens], dtype=dtype),
            y=torch.as_tensor([t.y for t in tokens], dtype=dtype),
            base=bases.pop(),
        )

    def head_view(self) -> "TransformBatch":
        """Insert a singleton head axis in front of the token axis."""
        return TransformBatch(
            self.proj.unsqueeze(-4), self.proj_inv.unsqueeze(-4), self.x.unsqueeze(-2), self.y.unsqueeze(-2), self.base
        )


def _rotate_pairs(vec: torch.Tensor, pos: torch.Tensor, base: float) -> torch.Tensor:
    """Apply R(pos)^T (== R(pos)^-1) to consecutive channel pairs."""
    m = vec.shape[-1]
    freqs = base ** (-2.0 * torch.arange(m // 2, dtype=vec.dtype, device=vec.device) / m)
    angles = pos.to(vec.dtype).unsqueeze(-1) * freqs
    c, s = torch.cos(angles), torch.sin(angles)
    even, odd = vec[..., 0::2], vec[..., 1::2]
    out = torch.stack([even * c + odd * s, odd * c - even * s], dim=-1)
    return out.flatten(-2)


def _modulate(vec: torch.Tensor, tf: TransformBatch, query: bool) -> torch.Tensor:
    d = vec.shape[-1]
    half, q = d // 2, d // 4
    chunks = vec[..., :half].unflatten(-1, (d // 8, 4))
    if query:
        proj_part = chunks @ tf.proj.to(vec.dtype)
    else:
        proj_part = chunks @ tf.proj_inv.to(vec.dtype).transpose(-1, -2)
    rx = _rotate_pairs(vec[..., half : half + q], tf.x, tf.base)
    ry = _rotate_pairs(vec[..., half + q :], tf.y, tf.base)
    return torch.cat([proj_part.flatten(-2), rx, ry], dim=-1)


def apply_query_transform(vec: torch.Tensor, tf: TransformBatch) -> torch.Tensor:
    """G^T q for every token."""
    return _modulate(vec, tf, query=True)


def apply_kv_transform(vec: torch.Tensor, tf: TransformBatch) -> torch.Tensor:
    """G^-1 k for every token."""
    return _modulate(vec, tf, query=False)


def _check_finite(**tensors: torch.Tensor) -> None:
    for name, t in tensors.items():
        if not torch.isfinite(t).all():
            raise NonFiniteError(f"Non-finite values in attention {name}")


def gta_attention(
    queries: torch.Tensor,
    keys: torch.Tensor,
    values: torch.Tensor,
    transforms: TransformBatch,
    key_transforms: TransformBatch | None = None,
    key_mask: torch.Tensor | None = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """Geometry-modulated scaled dot-product attention.

    queries: (..., Tq, d); keys/values: (..., Tk, d). ``transforms`` belong
    to the query tokens and ``key_transforms`` (default: same) to the keys.
    ``key_mask`` (..., Tk) is True for keys that may be attended.
    """
    _check_finite(queries=queries, keys=keys, values=values)
    d = queries.shape[-1]
    if keys.shape[-1] != d or values.shape[-1] != d:
        raise ShapeError(f"Inconsistent token dims: q={d} k={keys.shape[-1]} v={values.shape[-1]}")
    if keys.shape[-2] != values.shape[-2]:
        raise ShapeError("keys and values must have the same length")
    if d % heads != 0 or (d // heads) % 8 != 0:
        raise ShapeError(f"heads={heads} must split d={d} into multiples of 8")
    key_transforms = transforms if key_transforms is None else key_transforms
    dh = d // heads

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.unflatten(-1, (heads, dh)).transpose(-2, -3)

    q_tf, k_tf = transforms.head_view(), key_transforms.head_view()
    q = apply_query_transform(split(queries), q_tf)
    k = apply_kv_transform(split(keys), k_tf)
    v = apply_kv_transform(split(values), k_tf)

    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask.unsqueeze(-2).unsqueeze(-2), float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ v).transpose(-2, -3).flatten(-2)
    if return_weights:
        return out, weights
    return out


@dataclass(frozen=True)
class ViewTransforms:
    """Per-view projective matrices for a token grid (N views)."""

    proj: torch.Tensor
    proj_inv: torch.Tensor
    base: float = ROPE_BASE
    use_positions: bool = True

    @classmethod
    def from_cameras(
        cls,
        cameras: Sequence[CameraView],
        dtype: torch.dtype = torch.float32,
        base: float = ROPE_BASE,
        camera_injection: bool = True,
    ) -> "ViewTransforms":
        n = len(cameras)
        if not camera_injection:
            eye = torch.eye(4, dtype=dtype).expand(n, 4, 4).clone()
            return cls(eye, eye.clone(), base, use_positions=False)
        mats = [build_projective(c) for c in cameras]
        return cls(
            proj=torch.as_tensor(np.stack([p.m for p in mats]), dtype=dtype),
            proj_inv=torch.as_tensor(np.stack([p.inverse().m for p in mats]), dtype=dtype),
            base=base,
        )

    def __len__(self) -> int:
        return self.proj.shape[0]

    def select(self, view_index: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> TransformBatch:
        """Token transforms for views ``view_index`` at grid coordinates (x, y)."""
        if not self.use_positions:
            x = torch.zeros_like(x)
            y = torch.zeros_like(y)
        return TransformBatch(self.proj[view_index], self.proj_inv[view_index], x, y, self.base)


def _pad_grid(grid: torch.Tensor, window: int) -> tuple[torch.Tensor, int, int]:
    _, h, w, _ = grid.shape
    ph, pw = (-h) % window, (-w) % window
    if ph or pw:
        grid = F.pad(grid, (0, 0, 0, pw, 0, ph))
    return grid, h + ph, w + pw


def _partition(t: torch.Tensor, window: int) -> torch.Tensor:
    """(N, Hp, Wp, ...) -> (N, nW, window*window, ...)."""
    n, hp, wp = t.shape[:3]
    rest = t.shape[3:]
    t = t.reshape(n, hp // window, window, wp // window, window, *rest)
    t = t.transpose(2, 3)
    return t.reshape(n, (hp // window) * (wp // window), window * window, *rest)


def _merge(t: torch.Tensor, hp: int, wp: int, window: int) -> torch.Tensor:
    n = t.shape[0]
    rest = t.shape[3:]
    t = t.reshape(n, hp // window, wp // window, window, window, *rest)
    t = t.transpose(2, 3)
    return t.reshape(n, hp, wp, *rest)


def _grid_coordinates(n: int, hp: int, wp: int, device, dtype) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    ys, xs = torch.meshgrid(
        torch.arange(hp, device=device, dtype=dtype), torch.arange(wp, device=device, dtype=dtype), indexing="ij"
    )
    views = torch.arange(n, device=device).view(n, 1, 1).expand(n, hp, wp)
    return views, xs.expand(n, hp, wp), ys.expand(n, hp, wp)


def windowed_attention(
    grid: torch.Tensor,
    transforms: ViewTransforms,
    window_size: int,
    shift: int = 0,
    keys: torch.Tensor | None = None,
    values: torch.Tensor | None = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """Per-window camera-aware self-attention on an (N, H', W', d) grid.

    The grid is padded to a multiple of the window (padding tokens are never
    attended), cyclically rolled by ``shift``, partitioned, attended, and
    rolled back. ``keys``/``values`` default to ``grid``. A window larger
    than the grid pads it up to a single window per view.
    """
    if grid.dim() != 4:
        raise ShapeError(f"Token grid must be N x H x W x d, got {tuple(grid.shape)}")
    n, h, w, d = grid.shape
    if len(transforms) != n:
        raise ShapeError(f"{len(transforms)} view transforms for {n} views")
    if window_size < 1 or h == 0 or w == 0:
        raise ValidationError(f"Window {window_size} does not fit a {h}x{w} token grid")
    keys = grid if keys is None else keys
    values = grid if values is None else values
    shift = shift % window_size

    q, hp, wp = _pad_grid(grid, window_size)
    k, _, _ = _pad_grid(keys, window_size)
    v, _, _ = _pad_grid(values, window_size)
    views, xs, ys = _grid_coordinates(n, hp, wp, grid.device, grid.dtype)
    real = torch.zeros(n, hp, wp, dtype=torch.bool, device=grid.device)
    real[:, :h, :w] = True

    def roll(t: torch.Tensor) -> torch.Tensor:
        return torch.roll(t, shifts=(-shift, -shift), dims=(1, 2)) if shift else t

    q, k, v, views, xs, ys, real = (roll(t) for t in (q, k, v, views, xs, ys, real))
    tf = transforms.select(_partition(views, window_size), _partition(xs, window_size), _partition(ys, window_size))
    result = gta_attention(
        _partition(q, window_size),
        _partition(k, window_size),
        _partition(v, window_size),
        tf,
        key_mask=_partition(real, window_size),
        heads=heads,
        return_weights=return_weights,
    )
    out, weights = result if return_weights else (result, None)
    out = _merge(out, hp, wp, window_size)
    if shift:
        out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
    out = out[:, :h, :w]
    return (out, weights) if return_weights else out


def cross_view_attention(
    grid: torch.Tensor,
    transforms: ViewTransforms,
    window_size: int | None = None,
    keys: torch.Tensor | None = None,
    values: torch.Tensor | None = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """Queries of each view attend to the same window in every other view.

    ``window_size`` None means one window covering the whole grid. A single
    view has nothing to attend to and is returned unchanged.
    """
    if grid.dim() != 4:
        raise ShapeError(f"Token grid must be N x H x W x d, got {tuple(grid.shape)}")
    n, h, w, d = grid.shape
    if n < 2:
        LOG.debug("cross-view attention skipped: single view")
        return (grid, None) if return_weights else grid
    window = max(h, w) if window_size is None else window_size
    if window < 1 or window > max(h, w):
        raise ValidationError(f"Window {window} does not fit a {h}x{w} token grid")
    keys = grid if keys is None else keys
    values = grid if values is None else values

    q, hp, wp = _pad_grid(grid, window)
    k, _, _ = _pad_grid(keys, window)
    v, _, _ = _pad_grid(values, window)
    views, xs, ys = _grid_coordinates(n, hp, wp, grid.device, grid.dtype)
    real = torch.zeros(n, hp, wp, dtype=torch.bool, device=grid.device)
    real[:, :h, :w] = True

    qw, kw, vw = (_partition(t, window) for t in (q, k, v))
    vid, xw, yw, rw = (_partition(t, window) for t in (views, xs, ys, real))

    # for view i, keys are the concatenated windows of every view j != i
    others = torch.tensor([[j for j in range(n) if j != i] for i in range(n)], device=grid.device)

    def gather(t: torch.Tensor) -> torch.Tensor:
        g = t[others]  # (N, N-1, nW, T, ...)
        g = g.transpose(1, 2)
        return g.reshape(n, g.shape[1], (n - 1) * g.shape[3], *g.shape[4:])

    q_tf = transforms.select(vid, xw, yw)
    k_tf = transforms.select(gather(vid), gather(xw), gather(yw))
    result = gta_attention(
        qw, gather(kw), gather(vw), q_tf, key_transforms=k_tf, key_mask=gather(rw), heads=heads,
        return_weights=return_weights,
    )
    out, weights = result if return_weights else (result, None)
    out = _merge(out, hp, wp, window)[:, :h, :w]
    return (out, weights) if return_weights else out


def global_attention(
    grid: torch.Tensor,
    transforms: ViewTransforms,
    keys: torch.Tensor | None = None,
    values: torch.Tensor | None = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """Unwindowed self-attention over all tokens of each view."""
    if grid.dim() != 4:
        raise ShapeError(f"Token grid must be N x H x W x d, got {tuple(grid.shape)}")
    n, h, w, d = grid.shape
    keys = grid if keys is None else keys
    values = grid if values is None else values
    views, xs, ys = _grid_coordinates(n, h, w, grid.device, grid.dtype)
    tf = transforms.select(views.reshape(n, -1), xs.reshape(n, -1), ys.reshape(n, -1))
    result = gta_attention(
        grid.reshape(n, h * w, d), keys.reshape(n, h * w, d), values.reshape(n, h * w, d), tf,
        heads=heads, return_weights=return_weights,
    )
    out, weights = result if return_weights else (result, None)
    out = out.reshape(n, h, w, d)
    return (out, weights) if return_weights else out
