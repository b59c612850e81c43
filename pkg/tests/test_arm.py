import math

import numpy as np
import pytest

from lasergrasp.geom import PointCloud, Pose, Rotation, VoxelGrid, vec3
from lasergrasp.arm import (
    NoSolution,
    OutOfLimits,
    collision_free,
    config_distance,
    default_chain,
    fk,
    ik,
    joint_limit_proximity,
    min_clearance,
    plan_joint_path,
)


@pytest.fixture(scope="module")
def chain():
    return default_chain()


def random_in_limits(chain, rng, margin=0.15):
    lo, hi = chain.limits_lo, chain.limits_hi
    span = hi - lo
    return rng.uniform(lo + margin * span, hi - margin * span)


class TestFk:
    def test_home_pose_fixture(self, chain):
        """Hand-compose the default chain at zero config as an independent check.

        At q = 0 no joint rotates, so the end effector sits at the sum of all
        origin offsets: z = 0.27, x = 0.07+0.10+0.26+0.10+0.27+0.07+0.10.
        """
        ee, links = fk(chain, np.zeros(7))
        x = 0.07 + 0.10 + 0.26 + 0.10 + 0.27 + 0.07 + 0.10
        assert np.allclose(ee.translation, [x, 0.0, 0.27], atol=1e-12)
        assert ee.rotation.angle_to(Rotation.identity()) < 1e-12
        assert len(links) == 7

    def test_perturbing_joint_only_moves_downstream(self, chain):
        q0 = np.zeros(7)
        _, links0 = fk(chain, q0)
        for i in range(7):
            q = q0.copy()
            q[i] = 0.3
            _, links = fk(chain, q)
            for j in range(i):
                assert np.allclose(links[j].translation, links0[j].translation)
                assert links[j].rotation.angle_to(links0[j].rotation) < 1e-12

    def test_first_joint_rotates_ee_about_base_z(self, chain):
        q = np.zeros(7)
        q[0] = math.pi / 2
        ee, _ = fk(chain, q)
        home, _ = fk(chain, np.zeros(7))
        r = math.hypot(*home.translation[:2])
        assert np.allclose(ee.translation, [0.0, r, 0.27], atol=1e-12)


class TestIk:
    def test_fk_generated_targets(self, chain):
        rng = np.random.default_rng(3)
        successes = 0
        trials = 60
        for _ in range(trials):
            q_rand = random_in_limits(chain, rng)
            target, _ = fk(chain, q_rand)
            try:
                q = ik(chain, target, restarts=8)
            except NoSolution:
                continue
            got, _ = fk(chain, q)
            assert np.linalg.norm(got.translation - target.translation) <= 1e-3
            assert got.rotation.angle_to(target.rotation) <= 1e-2
            assert chain.within_limits(q)
            successes += 1
        assert successes / trials >= 0.95

    def test_unreachable(self, chain):
        target = Pose(Rotation.identity(), vec3(3.0, 0, 0))
        with pytest.raises(NoSolution):
            ik(chain, target, restarts=2, max_iterations=40)

    def test_seed_already_solution(self, chain):
        q_seed = chain.mid_config()
        target, _ = fk(chain, q_seed)
        q = ik(chain, target, seed_config=q_seed)
        assert np.allclose(q, q_seed)

    def test_deterministic(self, chain):
        rng = np.random.default_rng(5)
        q_rand = random_in_limits(chain, rng)
        target, _ = fk(chain, q_rand)
        a = ik(chain, target, restart_seed=1)
        b = ik(chain, target, restart_seed=1)
        assert np.array_equal(a, b)


class TestCollision:
    def test_empty_obstacles(self, chain):
        assert collision_free(chain, np.zeros(7), PointCloud(np.zeros((0, 3))))

    def test_point_on_link_axis(self, chain):
        _, links = fk(chain, np.zeros(7))
        cap = chain.capsules[2]
        mid = links[cap.link].apply(0.5 * (cap.p0 + cap.p1))
        cloud = PointCloud(mid[None, :])
        assert not collision_free(chain, np.zeros(7), cloud)

    def test_boundary_inclusive(self, chain):
        # point exactly at capsule radius + clearance is free
        _, links = fk(chain, np.zeros(7))
        cap = chain.capsules[2]
        mid_local = 0.5 * (cap.p0 + cap.p1)
        clearance = 0.05
        p = links[cap.link].apply(mid_local + np.array([0.0, 0.0, cap.radius + clearance]))
        cloud = PointCloud(p[None, :])
        assert collision_free(chain, np.zeros(7), cloud, clearance=clearance)
        closer = links[cap.link].apply(mid_local + np.array([0.0, 0.0, cap.radius + clearance - 1e-4]))
        assert not collision_free(chain, np.zeros(7), PointCloud(closer[None, :]), clearance=clearance)

    def test_matches_brute_force(self, chain):
        rng = np.random.default_rng(11)
        from lasergrasp.arm import capsule_segments_world

        for _ in range(10):
            q = random_in_limits(chain, rng)
            pts = rng.uniform(-1.0, 1.0, size=(300, 3))
            cloud = PointCloud(pts)
            clearance = 0.02
            got = collision_free(chain, q, cloud, clearance)
            expect = True
            for p0, p1, r in capsule_segments_world(chain, q):
                d = p1 - p0
                L2 = d @ d
                t = np.clip((pts - p0) @ d / L2, 0, 1)
                dist = np.linalg.norm(pts - (p0 + t[:, None] * d), axis=1)
                if np.any(dist < r + clearance):
                    expect = False
            assert got == expect

    def test_grid_mode(self, chain):
        _, links = fk(chain, np.zeros(7))
        cap = chain.capsules[2]
        mid = links[cap.link].apply(0.5 * (cap.p0 + cap.p1))
        grid = VoxelGrid.from_points(mid[None, :], 0.02)
        assert not collision_free(chain, np.zeros(7), grid)
        far = VoxelGrid.from_points(np.array([[5.0, 5.0, 5.0]]), 0.02)
        assert collision_free(chain, np.zeros(7), far)


class TestConfigDistance:
    def test_zero(self):
        q = np.ones(7)
        assert config_distance(q, q) == 0.0

    def test_unit_difference(self):
        a = np.zeros(7)
        b = np.zeros(7)
        b[0] = 1.0
        assert config_distance(a, b) == 1.0

    def test_metric_properties(self, rng):
        for _ in range(50):
            a, b, c = rng.normal(size=(3, 7))
            w = rng.uniform(0.1, 2.0, size=7)
            dab = config_distance(a, b, w)
            dba = config_distance(b, a, w)
            assert dab >= 0
            assert abs(dab - dba) < 1e-12
            assert dab <= config_distance(a, c, w) + config_distance(c, b, w) + 1e-12


class TestJointLimitProximity:
    def test_mid_range_zero(self, chain):
        assert joint_limit_proximity(chain, chain.mid_config()) == 0.0

    def test_at_limit_one(self, chain):
        q = chain.mid_config()
        q[3] = chain.limits_hi[3]
        assert abs(joint_limit_proximity(chain, q) - 1.0) < 1e-12

    def test_quarter_from_limit(self, chain):
        q = chain.mid_config()
        lo, hi = chain.limits_lo[2], chain.limits_hi[2]
        half = 0.5 * (hi - lo)
        q[2] = hi - 0.25 * half
        assert abs(joint_limit_proximity(chain, q) - 0.75) < 1e-12

    def test_out_of_limits(self, chain):
        q = chain.mid_config()
        q[0] = chain.limits_hi[0] + 0.1
        with pytest.raises(OutOfLimits):
            joint_limit_proximity(chain, q)


class TestPlanJointPath:
    def test_straight_line_when_clear(self, chain):
        q0 = chain.mid_config()
        q1 = q0 + 0.2
        path = plan_joint_path(chain, q0, q1, None)
        assert len(path) == 8
        assert np.allclose(path[0], q0)
        assert np.allclose(path[-1], q1)
        mid = 0.5 * (q0 + q1)
        assert np.allclose(path[len(path) // 2], mid, atol=0.15)

    def test_descent_resolves_collision(self, chain):
        q0 = chain.mid_config()
        q1 = q0.copy()
        q1[0] += 1.2
        mid_q = 0.5 * (q0 + q1)
        ee_mid, _ = fk(chain, mid_q)
        obstacle = PointCloud(ee_mid.translation[None, :])
        path = plan_joint_path(chain, q0, q1, obstacle, clearance=0.02)
        worst = min(min_clearance(chain, q, obstacle) for q in path[1:-1])
        assert worst >= 0.0
