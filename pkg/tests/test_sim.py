import math

import numpy as np
import pytest

from lasergrasp.geom import Pose, Rotation, vec3
from lasergrasp.graspdetect import HandModel
from lasergrasp.sim import (
    Aabb,
    BeamMiss,
    CameraModel,
    DistractorSpec,
    LaserEmitter,
    PlacementFailure,
    SceneObject,
    SceneSpec,
    contains,
    laser_hit_oracle,
    make_table,
    random_scene,
    ray_cast,
    render_depth,
    render_laser_sequence,
    scene_from_json,
    scene_to_json,
    simulate_grasp_execution,
    surface_points,
    write_depth_pgm,
    write_rgb_ppm,
)


def look_down_pose(height: float, xy=(0.0, 0.0)) -> Pose:
    """Camera above the origin looking straight down (+z cam = -z world)."""
    R = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
    return Pose(Rotation.from_matrix(R), vec3(xy[0], xy[1], height))


def facing_x_pose(x: float, y=0.0, z=0.0) -> Pose:
    """Camera on the -x side looking along +x (world z maps to image up)."""
    R = np.column_stack([[0, 0, 1.0], [0, -1.0, 0], [1.0, 0, 0]])
    return Pose(Rotation.from_matrix(R), vec3(x, y, z))


@pytest.fixture
def small_cam():
    return CameraModel().scaled(0.25)


class TestPrimitives:
    def test_ray_box_face(self):
        box = SceneObject(1, "box", (0.2, 0.2, 0.2), Pose(Rotation.identity(), vec3(1, 0, 0)))
        t = ray_cast(box, np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert abs(t[0] - 0.9) < 1e-12

    def test_ray_sphere(self):
        s = SceneObject(1, "sphere", (0.5,), Pose(Rotation.identity(), vec3(2, 0, 0)))
        t = ray_cast(s, np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert abs(t[0] - 1.5) < 1e-12

    def test_ray_cylinder_side_and_cap(self):
        c = SceneObject(1, "cylinder", (0.1, 0.4), Pose(Rotation.identity(), vec3(1, 0, 0)))
        t_side = ray_cast(c, np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert abs(t_side[0] - 0.9) < 1e-12
        t_cap = ray_cast(c, np.array([[1.0, 0, 1.0]]), np.array([[0.0, 0, -1.0]]))
        assert abs(t_cap[0] - 0.8) < 1e-12

    def test_ray_miss(self):
        s = SceneObject(1, "sphere", (0.1,), Pose(Rotation.identity(), vec3(0, 5, 0)))
        t = ray_cast(s, np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert np.isinf(t[0])

    def test_contains(self):
        c = SceneObject(1, "cylinder", (0.1, 0.4), Pose.identity())
        inside = contains(c, np.array([[0.05, 0, 0.1], [0.15, 0, 0], [0, 0, 0.3]]))
        assert list(inside) == [True, False, False]

    def test_surface_points_on_surface(self):
        for shape, dims in [("box", (0.1, 0.2, 0.3)), ("cylinder", (0.05, 0.2)), ("sphere", (0.07,))]:
            obj = SceneObject(1, shape, dims, Pose(Rotation.from_axis_angle(vec3(0, 0, 1), 0.3), vec3(0.2, -0.1, 0.5)))
            pts, normals = surface_points(obj, 0.01)
            # stepping slightly outward along the normal must leave the body
            assert not contains(obj, pts + 1e-4 * normals).any()
            # stepping slightly inward must stay inside (pad covers edge rounding)
            assert contains(obj, pts - 1e-4 * normals, pad=1e-6).all()


class TestSceneSpec:
    def test_unique_ids_enforced(self):
        o = SceneObject(1, "sphere", (0.05,), Pose.identity())
        with pytest.raises(ValueError):
            SceneSpec((o, o), ())

    def test_sign_conventions(self):
        with pytest.raises(ValueError):
            SceneSpec((SceneObject(-1, "sphere", (0.05,), Pose.identity()),), ())
        with pytest.raises(ValueError):
            SceneSpec((), (SceneObject(1, "box", (1, 1, 1), Pose.identity()),))

    def test_json_round_trip(self):
        scene = random_scene(3, seed=5, workspace_limits=Aabb([-1, -1, 0], [1, 1, 2]))
        back = scene_from_json(scene_to_json(scene))
        assert [o.id for o in back.objects] == [o.id for o in scene.objects]
        for a, b in zip(back.objects, scene.objects):
            assert a.shape == b.shape
            assert np.allclose(a.pose.translation, b.pose.translation)
        assert back.workspace_limits.contains(vec3(0, 0, 1))


class TestRenderDepth:
    def test_wall_at_one_meter(self, small_cam):
        wall = SceneObject(-1, "box", (0.02, 4.0, 4.0), Pose(Rotation.identity(), vec3(1.01, 0, 0)))
        scene = SceneSpec((), (wall,))
        frame, cloud = render_depth(scene, small_cam, facing_x_pose(0.0))
        valid = frame.depth > 0
        assert valid.all()
        assert np.allclose(frame.depth[valid], 1.0, atol=1e-6)
        assert len(cloud) == small_cam.width * small_cam.height

    def test_min_range_invalidates(self, small_cam):
        wall = SceneObject(-1, "box", (0.02, 4.0, 4.0), Pose(Rotation.identity(), vec3(0.31, 0, 0)))
        scene = SceneSpec((), (wall,))
        frame, cloud = render_depth(scene, small_cam, facing_x_pose(0.0))
        assert (frame.depth == 0).all()
        assert len(cloud) == 0

    def test_empty_scene(self, small_cam):
        frame, cloud = render_depth(SceneSpec(), small_cam, Pose.identity())
        assert (frame.depth == 0).all()
        assert len(cloud) == 0

    def test_points_on_labeled_surface(self, small_cam):
        scene = random_scene(3, seed=11)
        pose = look_down_pose(1.6)
        _, cloud = render_depth(scene, small_cam, pose)
        world = pose.apply(cloud.points)
        for body in scene.bodies:
            mask = cloud.labels == body.id
            if not mask.any():
                continue
            pts = world[mask]
            # distance to the surface via tiny inward/outward containment probe
            _, normals_all = surface_points(body, 0.004)
            # check points lie on the body's boundary: inside when padded out,
            # outside when padded in
            assert contains(body, pts, pad=1e-6).all()
            assert not contains(body, pts, pad=-1e-4).any()

    def test_occlusion(self, small_cam):
        # a small box in front of a wall: every wall pixel must be farther
        wall = SceneObject(-1, "box", (0.02, 3.0, 3.0), Pose(Rotation.identity(), vec3(2.01, 0, 0)))
        box = SceneObject(1, "box", (0.1, 0.3, 0.3), Pose(Rotation.identity(), vec3(1.0, 0, 1.0)))
        # rest the box on nothing; rendering does not require support
        scene = SceneSpec((box,), (wall,))
        frame, cloud = render_depth(scene, small_cam, facing_x_pose(0.0, z=1.0))
        labels = np.zeros_like(frame.depth, dtype=int)
        labels.reshape(-1)[: len(cloud)]  # silence linters
        box_depths = []
        wall_depths = []
        flat_valid = frame.depth.ravel() > 0
        assert (cloud.labels == 1).any()
        box_max = cloud.points[cloud.labels == 1][:, 2].max()
        wall_min = cloud.points[cloud.labels == -1][:, 2].min()
        assert box_max < wall_min

    def test_depth_matches_per_pixel_oracle(self, small_cam):
        scene = random_scene(2, seed=3)
        pose = look_down_pose(1.5)
        frame, _ = render_depth(scene, small_cam, pose)
        rng = np.random.default_rng(0)
        R = pose.rotation.as_matrix()
        for _ in range(50):
            u = int(rng.integers(0, small_cam.width))
            v = int(rng.integers(0, small_cam.height))
            d_cam = np.array([(u - small_cam.cx) / small_cam.fx, (v - small_cam.cy) / small_cam.fy, 1.0])
            d_world = R @ d_cam
            best = math.inf
            for body in scene.bodies:
                t = ray_cast(body, pose.translation[None, :], d_world[None, :])[0]
                best = min(best, t)
            expect = 0.0
            if math.isfinite(best) and small_cam.min_range <= best <= small_cam.max_range:
                expect = best
            assert abs(frame.depth[v, u] - expect) < 1e-9

    def test_image_writers(self, tmp_path, small_cam):
        scene = random_scene(1, seed=1)
        frame, _ = render_depth(scene, small_cam, look_down_pose(1.5))
        write_depth_pgm(tmp_path / "d.pgm", frame)
        write_rgb_ppm(tmp_path / "c.ppm", frame)
        assert (tmp_path / "d.pgm").read_bytes().startswith(b"P5")
        assert (tmp_path / "c.ppm").read_bytes().startswith(b"P6")


class TestLaser:
    def make_scene(self):
        table = make_table(-1, (0.0, 0.0), 0.74)
        box = SceneObject(1, "box", (0.06, 0.06, 0.12), Pose(Rotation.identity(), vec3(0, 0, 0.74 + 0.06)))
        return SceneSpec((box,), (table,))

    def emitter_at(self, scene, target):
        e = LaserEmitter(Pose(Rotation.identity(), vec3(0.0, -1.2, 1.1)))
        return e.aimed_at(target)

    def test_hit_oracle_box_face(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0, -0.03, 0.80))
        point, label = laser_hit_oracle(scene, e)
        assert label == 1
        assert abs(point[1] - (-0.03)) < 1e-9

    def test_hit_oracle_table(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0.3, 0.2, 0.74))
        point, label = laser_hit_oracle(scene, e)
        assert label == -1
        assert abs(point[2] - 0.74) < 1e-9

    def test_beam_miss(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0.0, -1.2, 5.0))
        with pytest.raises(BeamMiss):
            laser_hit_oracle(scene, e)

    def test_pulse_pattern(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0, -0.03, 0.80))
        cam = CameraModel().scaled(0.25)
        cam_pose = facing_x_pose(0.0, y=-1.3, z=1.0)
        # look along +y instead: build a pose facing the scene from -y
        R = np.column_stack([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
        cam_pose = Pose(Rotation.from_matrix(R), vec3(0, -1.3, 1.0))
        seq = render_laser_sequence(scene, e, cam, cam_pose, n_frames=12, fps=30.0)
        on_pattern = [p is not None for p in seq.spot_pixels]
        # 5 Hz at 30 fps: period 6 frames, 3 on then 3 off
        assert on_pattern == [True, True, True, False, False, False] * 2
        assert not seq.beam_missed

    def test_spot_pixel_matches_projection(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0, -0.03, 0.80))
        cam = CameraModel().scaled(0.5)
        R = np.column_stack([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
        cam_pose = Pose(Rotation.from_matrix(R), vec3(0, -1.3, 1.0))
        seq = render_laser_sequence(scene, e, cam, cam_pose, n_frames=6, fps=30.0)
        hit_cam = cam_pose.inverse().apply(seq.hit_point)
        u = cam.fx * hit_cam[0] / hit_cam[2] + cam.cx
        v = cam.fy * hit_cam[1] / hit_cam[2] + cam.cy
        got = seq.spot_pixels[0]
        assert got is not None
        assert abs(got[0] - u) < 1e-9 and abs(got[1] - v) < 1e-9
        # the ON frame really contains saturated red pixels near the spot
        frame = seq.frames[0]
        patch = frame.rgb[int(v) - 3 : int(v) + 4, int(u) - 3 : int(u) + 4]
        assert (patch[:, :, 0] == 255).any()

    def test_beam_miss_sequence_still_renders(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0.0, -1.2, 5.0))
        cam = CameraModel().scaled(0.25)
        R = np.column_stack([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
        cam_pose = Pose(Rotation.from_matrix(R), vec3(0, -1.3, 1.0))
        seq = render_laser_sequence(scene, e, cam, cam_pose, n_frames=8, fps=30.0)
        assert seq.beam_missed
        assert len(seq.frames) == 8
        assert all(p is None for p in seq.spot_pixels)

    def test_fps_precondition(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0, 0, 0.8))
        cam = CameraModel().scaled(0.25)
        with pytest.raises(ValueError):
            render_laser_sequence(scene, e, cam, Pose.identity(), 10, fps=9.0)

    def test_distractor_composited(self):
        scene = self.make_scene()
        e = self.emitter_at(scene, vec3(0, -0.03, 0.80))
        cam = CameraModel().scaled(0.25)
        R = np.column_stack([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
        cam_pose = Pose(Rotation.from_matrix(R), vec3(0, -1.3, 1.0))
        d = DistractorSpec((10.0, 10.0), (5.0, 0.0), 3.0)
        seq = render_laser_sequence(scene, e, cam, cam_pose, 6, 30.0, distractors=[d])
        assert (seq.frames[0].rgb[10, 10] == 255).all()
        assert (seq.frames[2].rgb[10, 20] == 255).all()


class TestGraspExecution:
    def lone_cylinder_scene(self, diameter=0.05):
        table = make_table(-1, (0.0, 0.0), 0.74)
        cyl = SceneObject(
            1, "cylinder", (diameter / 2, 0.12), Pose(Rotation.identity(), vec3(0, 0, 0.80))
        )
        return SceneSpec((cyl,), (table,))

    def top_down_grasp(self, x=0.0, y=0.0, z=0.84):
        # approach +x_hand = (0,0,-1); closing +y_hand = (0,1,0); z_hand = x_world
        R = np.column_stack([[0, 0, -1.0], [0, 1.0, 0], [1.0, 0, 0]])
        return Pose(Rotation.from_matrix(R), vec3(x, y, z))

    def test_centered_grasp_succeeds(self):
        scene = self.lone_cylinder_scene()
        out = simulate_grasp_execution(scene, HandModel(), self.top_down_grasp())
        assert out.success
        assert out.grasped_object == 1

    def test_far_grasp_no_contact(self):
        scene = self.lone_cylinder_scene()
        out = simulate_grasp_execution(scene, HandModel(), self.top_down_grasp(x=1.0))
        assert not out.success
        assert out.failure_reason == "no_contact"

    def test_table_edge_grasp_grabs_furniture(self):
        table = make_table(-1, (0.0, 0.0), 0.74, size=(1.2, 0.7), thickness=0.03)
        scene = SceneSpec((), (table,))
        # approach horizontally onto the table lip at x = +0.6, closing across
        # the slab thickness (closing axis = world z)
        R = np.column_stack([[-1.0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]])
        pose = Pose(Rotation.from_matrix(R), vec3(0.62, 0.0, 0.74 - 0.015))
        out = simulate_grasp_execution(scene, HandModel(), pose)
        assert out.success
        assert out.grasped_object == -1

    def test_oversized_cylinder_not_graspable(self):
        scene = self.lone_cylinder_scene(diameter=0.12)
        out = simulate_grasp_execution(scene, HandModel(), self.top_down_grasp())
        assert not out.success

    def test_lift_blocked_by_shelf(self):
        table = make_table(-1, (0.0, 0.0), 0.74)
        shelf = make_table(-2, (0.0, 0.0), 0.95, size=(0.6, 0.6), thickness=0.02)
        cyl = SceneObject(1, "cylinder", (0.02, 0.12), Pose(Rotation.identity(), vec3(0, 0, 0.80)))
        scene = SceneSpec((cyl,), (table, shelf))
        # side grasp around the cylinder, approach along +x
        R = np.column_stack([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        pose = Pose(Rotation.from_matrix(R), vec3(-0.05, 0.0, 0.86))
        out = simulate_grasp_execution(scene, HandModel(), pose)
        assert not out.success
        assert out.failure_reason == "lift_collision"

    def test_deterministic(self):
        scene = self.lone_cylinder_scene()
        a = simulate_grasp_execution(scene, HandModel(), self.top_down_grasp())
        b = simulate_grasp_execution(scene, HandModel(), self.top_down_grasp())
        assert a == b


class TestRandomScene:
    def test_zero_objects(self):
        scene = random_scene(0, seed=1)
        assert len(scene.objects) == 0
        assert len(scene.furniture) == 1

    def test_six_objects_no_overlap(self):
        scene = random_scene(6, seed=42)
        assert len(scene.objects) == 6
        samples = scene.surface_samples()
        for i, a in enumerate(scene.objects):
            pts_a = samples.points[samples.labels == a.id]
            for b in scene.objects[i + 1 :]:
                pts_b = samples.points[samples.labels == b.id]
                d = np.linalg.norm(pts_a[:, None, :] - pts_b[None, :500, :], axis=-1).min()
                assert d > 0.0

    def test_objects_rest_on_support(self):
        scene = random_scene(6, seed=9)
        top = scene.furniture[0].top_z()
        for o in scene.objects:
            assert abs(o.bottom_z() - top) <= 1e-3

    def test_deterministic(self):
        a = random_scene(5, seed=77)
        b = random_scene(5, seed=77)
        for oa, ob in zip(a.objects, b.objects):
            assert oa.shape == ob.shape
            assert np.allclose(oa.pose.translation, ob.pose.translation)

    def test_placement_failure(self):
        tiny = make_table(-1, (0, 0), 0.74, size=(0.2, 0.2))
        with pytest.raises(PlacementFailure):
            random_scene(40, seed=0, supports=[tiny])
