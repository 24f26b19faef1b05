from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from src.errors import NonFiniteError, ValidationError
from src.features.attention import (
    TransformBatch,
    ViewTransforms,
    build_token_transform,
    cross_view_attention,
    gta_attention,
    rope_matrix,
    windowed_attention,
)
from src.geometry.cameras import ProjectiveMatrix, build_projective
from src.geometry.rotations import random_rotation
from tests.helpers import identity_camera, random_camera


def dense_attention(q, k, v, q_tokens, k_tokens):
    """Literal G-matrix evaluation: q' = G^T q, k' = G^-1 k, v' = G^-1 v."""
    d = q.shape[-1]
    qs = np.stack([t.g.T @ x for t, x in zip(q_tokens, q)])
    ks = np.stack([np.linalg.inv(t.g) @ x for t, x in zip(k_tokens, k)])
    vs = np.stack([np.linalg.inv(t.g) @ x for t, x in zip(k_tokens, v)])
    scores = qs @ ks.T / math.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ vs, weights


def t64(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


class TestRope:
    def test_zero_position_is_identity(self):
        np.testing.assert_array_equal(rope_matrix(0.0, 8), np.eye(8))

    def test_single_pair(self):
        expected = [[math.cos(1.0), -math.sin(1.0)], [math.sin(1.0), math.cos(1.0)]]
        np.testing.assert_allclose(rope_matrix(1.0, 2, 10000.0), expected, atol=1e-15)

    @pytest.mark.parametrize("position", [-3.0, 0.5, 7.0, 123.0])
    def test_orthogonal(self, position):
        m = rope_matrix(position, 16)
        np.testing.assert_allclose(m.T @ m, np.eye(16), atol=1e-12)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValidationError):
            rope_matrix(1.0, 5)


class TestTokenTransform:
    def test_identity_camera_at_origin(self):
        tf = build_token_transform((0.0, 0.0), build_projective(identity_camera()), 16)
        np.testing.assert_array_equal(tf.g, np.eye(16))

    def test_d8_has_one_projective_copy(self, rng):
        p = build_projective(random_camera(rng))
        tf = build_token_transform((2.0, 3.0), p, 8)
        np.testing.assert_array_equal(tf.proj_block, p.m)

    def test_d16_block_assembly(self, rng):
        p = build_projective(random_camera(rng))
        tf = build_token_transform((1.5, -2.0), p, 16)
        expected = np.zeros((16, 16))
        expected[0:4, 0:4] = p.m
        expected[4:8, 4:8] = p.m
        expected[8:12, 8:12] = rope_matrix(1.5, 4)
        expected[12:16, 12:16] = rope_matrix(-2.0, 4)
        np.testing.assert_array_equal(tf.g, expected)
        rope = tf.rope_block
        np.testing.assert_allclose(rope.T @ rope, np.eye(8), atol=1e-9)
        np.testing.assert_allclose(tf.inverse() @ tf.g, np.eye(16), atol=1e-9)

    def test_dimension_must_divide_by_eight(self):
        with pytest.raises(ValidationError):
            build_token_transform((0.0, 0.0), build_projective(identity_camera()), 12)


class TestGtaAttention:
    def test_singleton_returns_value(self):
        tf = build_token_transform((0.0, 0.0), build_projective(identity_camera()), 8)
        batch = TransformBatch.from_tokens([tf])
        v = t64(np.arange(8.0)[None])
        out = gta_attention(t64(np.ones((1, 8))), t64(np.ones((1, 8))), v, batch)
        np.testing.assert_allclose(out.numpy(), v.numpy(), atol=1e-12)

    @pytest.mark.parametrize("count", [2, 8])
    def test_dense_oracle(self, rng, count):
        d = 8 if count == 2 else 16
        tokens = [
            build_token_transform(tuple(rng.integers(0, 6, size=2).astype(float)), build_projective(random_camera(rng)), d)
            for _ in range(count)
        ]
        q, k, v = (rng.normal(size=(count, d)) for _ in range(3))
        out, weights = gta_attention(
            t64(q), t64(k), t64(v), TransformBatch.from_tokens(tokens), return_weights=True
        )
        expected_out, expected_w = dense_attention(q, k, v, tokens, tokens)
        np.testing.assert_allclose(weights[0].numpy(), expected_w, atol=1e-9)
        np.testing.assert_allclose(out.numpy(), expected_out, atol=1e-9)

    def test_rows_sum_to_one(self, rng):
        tokens = [build_token_transform((float(i), 0.0), build_projective(random_camera(rng)), 16) for i in range(5)]
        q, k, v = (t64(rng.normal(size=(5, 16))) for _ in range(3))
        _, weights = gta_attention(q, k, v, TransformBatch.from_tokens(tokens), return_weights=True)
        np.testing.assert_allclose(weights.sum(-1).numpy(), 1.0, atol=1e-9)

    def test_degenerate_cameras_reduce_to_plain_attention(self, rng):
        cam = random_camera(rng)
        tokens = [build_token_transform((0.0, 0.0), build_projective(cam), 16) for _ in range(6)]
        q, k, v = (rng.normal(size=(6, 16)) for _ in range(3))
        out, weights = gta_attention(t64(q), t64(k), t64(v), TransformBatch.from_tokens(tokens), return_weights=True)
        plain = torch.softmax(t64(q) @ t64(k).T / 4.0, dim=-1)
        np.testing.assert_allclose(weights[0].numpy(), plain.numpy(), atol=1e-9)
        # values still pass through G^-1
        np.testing.assert_allclose(out.numpy(), (plain @ t64(v)).numpy() @ tokens[0].inverse().T, atol=1e-9)

        ident = [build_token_transform((0.0, 0.0), build_projective(identity_camera()), 16) for _ in range(6)]
        out = gta_attention(t64(q), t64(k), t64(v), TransformBatch.from_tokens(ident))
        expected = torch.softmax(t64(q) @ t64(k).T / 4.0, dim=-1) @ t64(v)
        np.testing.assert_allclose(out.numpy(), expected.numpy(), atol=1e-9)

    def test_multi_head_matches_per_head_oracle(self, rng):
        tokens = [build_token_transform((float(i), 1.0), build_projective(random_camera(rng)), 8) for i in range(4)]
        q, k, v = (rng.normal(size=(4, 16)) for _ in range(3))
        batch = TransformBatch.from_tokens(tokens)
        out = gta_attention(t64(q), t64(k), t64(v), batch, heads=2).numpy()
        for h in range(2):
            cols = slice(8 * h, 8 * h + 8)
            expected, _ = dense_attention(q[:, cols], k[:, cols], v[:, cols], tokens, tokens)
            np.testing.assert_allclose(out[:, cols], expected, atol=1e-9)

    def test_non_finite_rejected(self):
        tf = TransformBatch.from_tokens([build_token_transform((0.0, 0.0), build_projective(identity_camera()), 8)])
        bad = t64(np.full((1, 8), np.nan))
        with pytest.raises(NonFiniteError):
            gta_attention(bad, t64(np.ones((1, 8))), t64(np.ones((1, 8))), tf)


def _token(cameras, view, x, y, d):
    return build_token_transform((float(x), float(y)), build_projective(cameras[view]), d)


class TestWindowedAttention:
    def test_single_window_equals_full_attention(self, rng):
        cams = [random_camera(rng)]
        grid = rng.normal(size=(1, 4, 4, 8))
        out = windowed_attention(t64(grid), ViewTransforms.from_cameras(cams, torch.float64), window_size=4)
        tokens = [_token(cams, 0, c, r, 8) for r in range(4) for c in range(4)]
        flat = grid.reshape(16, 8)
        expected, _ = dense_attention(flat, flat, flat, tokens, tokens)
        np.testing.assert_allclose(out.numpy().reshape(16, 8), expected, atol=1e-9)

    def test_shifted_windows_match_partition_oracle(self, rng):
        cams = [random_camera(rng), random_camera(rng)]
        n, size, window, shift, d = 2, 8, 4, 2, 8
        grid = rng.normal(size=(n, size, size, d))
        out = windowed_attention(
            t64(grid), ViewTransforms.from_cameras(cams, torch.float64), window_size=window, shift=shift
        ).numpy()

        def window_of(r, c):
            return ((r - shift) % size) // window, ((c - shift) % size) // window

        for view in range(n):
            for r in range(size):
                for c in range(size):
                    members = [(r2, c2) for r2 in range(size) for c2 in range(size) if window_of(r2, c2) == window_of(r, c)]
                    tokens = [_token(cams, view, c2, r2, d) for r2, c2 in members]
                    keys = np.stack([grid[view, r2, c2] for r2, c2 in members])
                    q_tok = [_token(cams, view, c, r, d)]
                    expected, _ = dense_attention(grid[view, r, c][None], keys, keys, q_tok, tokens)
                    np.testing.assert_allclose(out[view, r, c], expected[0], atol=1e-9)

    def test_shift_round_trip_preserves_positions(self, rng):
        cams = [identity_camera()]
        grid = t64(rng.normal(size=(1, 8, 8, 8)))
        tf = ViewTransforms.from_cameras(cams, torch.float64, camera_injection=False)
        # zero keys give uniform weights, so every output is its window mean
        zeros = torch.zeros_like(grid)
        plain = windowed_attention(grid, tf, window_size=4, shift=0, keys=zeros, values=grid)
        shifted = windowed_attention(grid, tf, window_size=4, shift=2, keys=zeros, values=grid)
        rolled = torch.roll(grid, shifts=(-2, -2), dims=(1, 2))
        means = rolled.reshape(1, 2, 4, 2, 4, 8).mean(dim=(2, 4), keepdim=True).expand(1, 2, 4, 2, 4, 8)
        np.testing.assert_allclose(
            shifted.numpy(), torch.roll(means.reshape(1, 8, 8, 8), shifts=(2, 2), dims=(1, 2)).numpy(), atol=1e-12
        )
        np.testing.assert_allclose(plain[0, 0, 0].numpy(), grid[0, :4, :4].mean(dim=(0, 1)).numpy(), atol=1e-12)

    def test_padding_tokens_are_not_attended(self, rng):
        cams = [random_camera(rng)]
        grid = t64(rng.normal(size=(1, 3, 3, 8)))
        _, weights = windowed_attention(grid, ViewTransforms.from_cameras(cams, torch.float64), 2, return_weights=True)
        # bottom-right window holds one real token
        last = weights[0, -1, 0]
        np.testing.assert_allclose(last[0, 0].item(), 1.0, atol=1e-12)
        assert torch.all(last[0, 1:] == 0)

    @pytest.mark.parametrize("shift", [0, 2])
    def test_window_larger_than_grid_is_one_padded_window(self, rng, shift):
        cams = [random_camera(rng)]
        grid = rng.normal(size=(1, 3, 3, 8))
        out = windowed_attention(t64(grid), ViewTransforms.from_cameras(cams, torch.float64), 4, shift=shift)
        tokens = [_token(cams, 0, c, r, 8) for r in range(3) for c in range(3)]
        flat = grid.reshape(9, 8)
        expected, _ = dense_attention(flat, flat, flat, tokens, tokens)
        np.testing.assert_allclose(out.numpy().reshape(9, 8), expected, atol=1e-9)

    def test_degenerate_window_or_grid(self, rng):
        tf = ViewTransforms.from_cameras([identity_camera()], torch.float64)
        with pytest.raises(ValidationError):
            windowed_attention(t64(rng.normal(size=(1, 3, 3, 8))), tf, 0)
        with pytest.raises(ValidationError):
            windowed_attention(torch.zeros(1, 0, 3, 8, dtype=torch.float64), tf, 2)


class TestCrossViewAttention:
    def test_single_view_passes_through(self, rng):
        grid = t64(rng.normal(size=(1, 4, 4, 8)))
        out = cross_view_attention(grid, ViewTransforms.from_cameras([identity_camera()], torch.float64))
        assert out is grid

    def test_identical_views_attend_each_other(self, rng):
        tokens = rng.normal(size=(1, 3, 3, 8))
        grid = t64(np.concatenate([tokens, tokens]))
        tf = ViewTransforms.from_cameras([identity_camera()] * 2, torch.float64, camera_injection=False)
        out = cross_view_attention(grid, tf).numpy()
        flat = t64(tokens.reshape(9, 8))
        expected = (torch.softmax(flat @ flat.T / math.sqrt(8), dim=-1) @ flat).numpy()
        np.testing.assert_allclose(out[0].reshape(9, 8), expected, atol=1e-9)
        np.testing.assert_allclose(out[1].reshape(9, 8), expected, atol=1e-9)

    def test_three_views_match_dense_oracle(self, rng):
        cams = [random_camera(rng) for _ in range(3)]
        d, size = 8, 3
        grid = rng.normal(size=(3, size, size, d))
        out = cross_view_attention(t64(grid), ViewTransforms.from_cameras(cams, torch.float64)).numpy()
        cells = [(r, c) for r in range(size) for c in range(size)]
        for view in range(3):
            others = [(j, r, c) for j in range(3) if j != view for r, c in cells]
            k_tok = [_token(cams, j, c, r, d) for j, r, c in others]
            keys = np.stack([grid[j, r, c] for j, r, c in others])
            for r, c in cells:
                expected, _ = dense_attention(grid[view, r, c][None], keys, keys, [_token(cams, view, c, r, d)], k_tok)
                np.testing.assert_allclose(out[view, r, c], expected[0], atol=1e-9)

    def test_weights_invariant_to_world_rebasing(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            cams = [random_camera(rng, 16, 16), random_camera(rng, 16, 16)]
            rw, tw = random_rotation(rng), rng.normal(size=3)
            moved = [c.rebased(rw, tw) for c in cams]
            grid = t64(rng.normal(size=(2, 4, 4, 16)))
            _, before = cross_view_attention(grid, ViewTransforms.from_cameras(cams, torch.float64), return_weights=True)
            _, after = cross_view_attention(grid, ViewTransforms.from_cameras(moved, torch.float64), return_weights=True)
            np.testing.assert_allclose(after.numpy(), before.numpy(), atol=1e-6)


def test_projective_inverse_is_blockwise_closed_form(rng):
    p = build_projective(random_camera(rng))
    np.testing.assert_allclose(p.inverse().m, np.linalg.inv(p.m), atol=1e-12)
    assert isinstance(p.inverse(), ProjectiveMatrix)
