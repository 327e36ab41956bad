"""Generator and renderer self-consistency checks."""

import numpy as np
import pytest

from seglift.errors import DataError
from seglift.geometry import project_points
from seglift.synth import (
    SceneSpec,
    build_scene,
    generate_scene,
    load_scene,
    render_frames,
    save_scene,
)


class TestGenerateScene:
    def test_zero_objects_room_only(self):
        cloud, objects = generate_scene(SceneSpec(object_count=0, seed=1))
        assert objects == []
        assert np.all(cloud.gt_instance == -1)

    def test_point_budget_tracks_surface_area(self):
        # each object's point count should match round(area * density) closely
        cloud, objects = generate_scene(SceneSpec(object_count=6, seed=2, density=150.0))
        for oid, obj in enumerate(objects):
            expected = round(obj.area() * 150.0)
            actual = int(np.count_nonzero(cloud.gt_instance == oid))
            assert abs(actual - expected) <= max(1, 0.05 * expected)

    def test_same_seed_identical(self):
        a, _ = generate_scene(SceneSpec(object_count=4, seed=9))
        b, _ = generate_scene(SceneSpec(object_count=4, seed=9))
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.gt_instance, b.gt_instance)

    def test_different_seed_differs(self):
        a, _ = generate_scene(SceneSpec(object_count=4, seed=9))
        b, _ = generate_scene(SceneSpec(object_count=4, seed=10))
        assert a.positions.shape != b.positions.shape or not np.allclose(
            a.positions, b.positions
        )

    def test_objects_fit_inside_room(self):
        cloud, _ = generate_scene(SceneSpec(object_count=8, seed=4))
        room = np.array([6.0, 6.0, 3.0])
        assert np.all(cloud.positions >= -1e-9)
        assert np.all(cloud.positions <= room + 1e-9)


class TestRenderFrames:
    def test_isolated_sphere_renders_filled_disc(self):
        from seglift.synth import Sphere

        sphere = Sphere(center=np.array([3.0, 3.0, 1.5]), rotation=np.eye(3), radius=0.4)
        # odd image size puts the principal point exactly on a pixel center
        spec = SceneSpec(
            object_count=0,
            frame_count=1,
            image_size=(65, 65),
            camera=[((1.0, 3.0, 1.5), (3.0, 3.0, 1.5))],
        )
        (rendered,) = render_frames([sphere], spec)
        inst = rendered.instance
        h, w = inst.shape
        assert inst[h // 2, w // 2] == 0  # center pixel hits the sphere
        # silhouette radius in pixels: fx * r / sqrt(d^2 - r^2)
        fx = rendered.frame.fx
        dist = 2.0
        radius_px = fx * 0.4 / np.sqrt(dist**2 - 0.4**2)
        ys, xs = np.nonzero(inst == 0)
        spread = np.hypot(ys - (h - 1) / 2, xs - (w - 1) / 2)
        assert spread.max() <= radius_px + 1.0
        # interior of the disc is fully covered
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        inside = np.hypot(rr - (h - 1) / 2, cc - (w - 1) / 2) <= radius_px - 1.0
        assert np.all(inst[inside] == 0)
        # depth at the center equals distance minus radius
        assert rendered.frame.depth[h // 2, w // 2] == pytest.approx(dist - 0.4, abs=1e-6)

    def test_rays_missing_everything(self):
        # camera placed outside the room looking away from it
        spec = SceneSpec(
            object_count=0,
            frame_count=1,
            camera=[((-10.0, 3.0, 1.5), (-20.0, 3.0, 1.5))],
        )
        scene = build_scene(spec)
        assert np.all(scene.frames[0].depth == 0.0)
        assert np.all(scene.instances[0] == -1)

    def test_degenerate_pose_rejected(self):
        spec = SceneSpec(object_count=0, frame_count=1, camera=[((1.0, 1.0, 1.0), (1.0, 1.0, 1.0))])
        with pytest.raises(ValueError, match="degenerate camera pose"):
            build_scene(spec)

    def test_reprojection_consistency(self):
        # sampled surface points that pass the occlusion test land on pixels
        # whose instance render matches their label for >= 99% of points
        scene = build_scene(SceneSpec(object_count=5, frame_count=12, seed=6))
        agree = 0
        total = 0
        for rendered in scene.rendered:
            ps = project_points(scene.cloud.positions, rendered.frame, 0.1)
            labels = scene.cloud.gt_instance[ps.indices]
            rendered_ids = rendered.instance[ps.rows, ps.cols]
            agree += int(np.count_nonzero(labels == rendered_ids))
            total += len(ps)
        assert total > 1000
        assert agree / total >= 0.99

    def test_every_object_visible_somewhere(self):
        scene = build_scene(SceneSpec(object_count=8, frame_count=60, seed=4))
        for oid in range(8):
            best = max(int((inst == oid).sum()) for inst in scene.instances)
            assert best >= 50, f"object {oid} best visibility {best} px"

    def test_depth_instance_coverage_agreement(self):
        scene = build_scene(SceneSpec(object_count=3, frame_count=6, seed=11))
        for rendered in scene.rendered:
            has_instance = rendered.instance >= 0
            assert np.all(rendered.frame.depth[has_instance] > 0)


class TestSceneIO:
    def test_round_trip(self, tmp_path, small_scene):
        path = tmp_path / "scene"
        save_scene(small_scene, path)
        loaded = load_scene(path, require_instances=True)
        assert len(loaded.cloud) == len(small_scene.cloud)
        np.testing.assert_allclose(loaded.cloud.positions, small_scene.cloud.positions)
        np.testing.assert_array_equal(loaded.cloud.gt_instance, small_scene.cloud.gt_instance)
        assert len(loaded.frames) == len(small_scene.frames)
        f0, g0 = loaded.frames[0], small_scene.frames[0]
        assert (f0.fx, f0.fy, f0.cx, f0.cy) == (g0.fx, g0.fy, g0.cx, g0.cy)
        np.testing.assert_allclose(f0.extrinsics, g0.extrinsics)
        np.testing.assert_allclose(f0.depth, g0.depth, atol=1e-6)
        np.testing.assert_array_equal(loaded.instances[3], small_scene.instances[3])

    def test_refuses_nonempty_dir(self, tmp_path, small_scene):
        path = tmp_path / "scene"
        path.mkdir()
        (path / "junk.txt").write_text("x")
        with pytest.raises(DataError, match="not empty"):
            save_scene(small_scene, path)
        save_scene(small_scene, path, force=True)

    def test_truncated_depth_rejected(self, tmp_path, small_scene):
        path = tmp_path / "scene"
        save_scene(small_scene, path)
        victim = path / "frames" / "0000.depth"
        victim.write_bytes(victim.read_bytes()[:100])
        with pytest.raises(DataError, match="do not match"):
            load_scene(path)

    def test_missing_instances_optional(self, tmp_path, small_scene):
        path = tmp_path / "scene"
        save_scene(small_scene, path)
        for f in (path / "frames").glob("*.inst"):
            f.unlink()
        loaded = load_scene(path)
        assert np.all(loaded.instances[0] == -1)
        with pytest.raises(DataError, match="missing instance render"):
            load_scene(path, require_instances=True)
