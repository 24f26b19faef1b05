from __future__ import annotations

import numpy as np
import pytest

from src.errors import PlacementError, ValidationError
from src.geometry.cameras import back_project_many, pixel_centers
from src.synth.scenes import FLOOR_Y, arc_cameras, generate_room, textured_plane_pair


class TestRoom:
    def test_same_seed_same_scene(self, room):
        again = generate_room(7, num_classes=6)
        np.testing.assert_array_equal(again.gaussians.positions, room.gaussians.positions)
        for a, b in zip(again.images, room.images):
            np.testing.assert_array_equal(a, b)
        assert again.class_names == room.class_names

    def test_other_seed_moves_objects(self, room):
        other = generate_room(8, num_classes=6)
        assert [o.center for o in other.objects] != [o.center for o in room.objects]

    def test_views_and_labels(self, room):
        assert len(room.cameras) == len(room.images) == len(room.labels) == 6
        assert room.held_out == 3
        assert room.held_out not in room.input_views
        assert room.class_names[:2] == ["floor", "wall"]
        for labels in room.labels:
            valid = labels.labels[labels.valid]
            assert valid.min() >= 0 and valid.max() < 6
            assert labels.valid.mean() > 0.85
        seen = np.unique(np.concatenate([l.labels[l.valid] for l in room.labels]))
        assert {0, 1} <= set(seen.tolist())
        assert len(seen) >= 4

    def test_floor_depth_matches_ray_intersection(self, room):
        cam = room.cameras[room.held_out]
        labels = room.labels[room.held_out].labels.reshape(-1)
        depth = room.depths[room.held_out].reshape(-1)
        pixels = pixel_centers(cam.width, cam.height)
        # points at unit camera depth give each pixel's ray direction
        rays = back_project_many(pixels, np.ones(len(pixels)), cam) - cam.center
        floor = (labels == 0) & (rays[:, 1] > 1e-6) & (depth > 0)
        assert floor.sum() > 100
        expected = (FLOOR_Y - cam.center[1]) / rays[floor, 1]
        rel = np.abs(depth[floor] - expected) / expected
        assert np.median(rel) < 0.02
        assert np.mean(rel < 0.05) > 0.8

    def test_crowded_room_cannot_be_placed(self):
        with pytest.raises(PlacementError):
            generate_room(0, num_classes=6, n_objects=40, resolution=32, n_cameras=3)

    @pytest.mark.parametrize(
        "kwargs", [{"num_classes": 1}, {"resolution": 16}, {"n_cameras": 2}, {"spacing": 0.0}]
    )
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ValidationError):
            generate_room(0, **kwargs)

    def test_arc_cameras_face_the_room(self):
        cams = arc_cameras(5, 32)
        assert len(cams) == 5
        for cam in cams:
            # the room center is in front of every camera
            assert (cam.rotation @ np.zeros(3) + cam.translation)[2] > 0


class TestPlanePair:
    def test_zero_baseline_gives_identical_views(self):
        pair = textured_plane_pair(3.0, 0.0, resolution=32)
        np.testing.assert_array_equal(pair.images[0], pair.images[1])
        assert pair.disparity == 0.0

    def test_disparity_and_shift(self):
        pair = textured_plane_pair(3.0, 0.1875, resolution=64)
        assert pair.disparity == pytest.approx(4.0)
        assert pair.images.shape == (2, 3, 64, 64)
        np.testing.assert_array_equal(pair.depth, 3.0)
        # the source view sees the reference texture shifted left by the disparity
        shift = 4
        ref, src = pair.images
        np.testing.assert_allclose(src[:, :, : 64 - shift], ref[:, :, shift:], atol=1e-9)

    def test_texture_varies(self):
        pair = textured_plane_pair(3.0, 0.3)
        assert pair.images[0].std() > 0.05
        assert pair.images.min() >= 0.0 and pair.images.max() <= 1.0

    @pytest.mark.parametrize("depth, baseline", [(0.0, 0.1), (2.0, -0.1), (2.0, 2.0)])
    def test_bad_arguments(self, depth, baseline):
        with pytest.raises(ValidationError):
            textured_plane_pair(depth, baseline)

