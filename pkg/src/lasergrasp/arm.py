"""Simplified 7-DOF serial arm: forward/inverse kinematics, joint limits,
capsule collision geometry and configuration-space distance.

The default chain (shipped as ``data/default_arm_v1.json``) is a generic
7-DOF layout with roughly 1m reach; all planning behavior is parameterized
by the chain config, not hardcoded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .geom import PointCloud, Pose, Rotation, Vec3, VoxelGrid, normalized

JointConfig = np.ndarray  # shape (n_joints,)


class NoSolution(Exception):
    """Inverse kinematics failed after all restarts."""


class OutOfLimits(Exception):
    """Joint configuration violates the chain's limits."""


@dataclass(frozen=True)
class Joint:
    origin: Pose  # fixed offset from the previous link frame
    axis: Vec3  # unit rotation axis in the local frame
    limits: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "axis", normalized(np.asarray(self.axis, dtype=float)))
        lo, hi = self.limits
        if lo >= hi:
            raise ValueError("joint limits must satisfy lo < hi")


@dataclass(frozen=True)
class Capsule:
    link: int
    p0: Vec3
    p1: Vec3
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))


@dataclass(frozen=True)
class KinematicChain:
    base: Pose
    joints: tuple[Joint, ...]
    ee_offset: Pose
    capsules: tuple[Capsule, ...]
    name: str = "chain"

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def limits_lo(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def limits_hi(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def within_limits(self, q: JointConfig) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.limits_lo) and np.all(q <= self.limits_hi))

    def mid_config(self) -> JointConfig:
        return 0.5 * (self.limits_lo + self.limits_hi)


def _pose_from_json(d: dict) -> Pose:
    return Pose(Rotation(np.array(d["quaternion"], dtype=float)), np.array(d["position"], dtype=float))


def chain_from_json(data: dict) -> KinematicChain:
    joints = tuple(
        Joint(_pose_from_json(j["origin"]), np.array(j["axis"]), tuple(j["limits"]))
        for j in data["joints"]
    )
    capsules = tuple(
        Capsule(c["link"], np.array(c["p0"]), np.array(c["p1"]), c["radius"])
        for c in data.get("capsules", [])
    )
    return KinematicChain(
        _pose_from_json(data["base"]),
        joints,
        _pose_from_json(data["ee_offset"]),
        capsules,
        data.get("name", "chain"),
    )


def load_chain(path) -> KinematicChain:
    with open(path) as f:
        return chain_from_json(json.load(f))


def default_chain() -> KinematicChain:
    text = resources.files("lasergrasp.data").joinpath("default_arm_v1.json").read_text()
    return chain_from_json(json.loads(text))


def fk(chain: KinematicChain, q: JointConfig) -> tuple[Pose, list[Pose]]:
    """End-effector pose and per-link poses by serial composition."""
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_joints,):
        raise ValueError(f"expected {chain.n_joints} joint angles")
    T = chain.base
    links: list[Pose] = []
    for joint, angle in zip(chain.joints, q):
        T = T.compose(joint.origin).compose(Pose(Rotation.from_axis_angle(joint.axis, angle)))
        links.append(T)
    return T.compose(chain.ee_offset), links


def _pose_error(current: Pose, target: Pose) -> np.ndarray:
    """6D error: translation difference and world-frame rotation vector."""
    e = np.zeros(6)
    e[:3] = target.translation - current.translation
    dr = target.rotation.compose(current.rotation.inverse())
    w, x, y, z = dr.quat
    angle = 2.0 * math.acos(min(1.0, abs(w)))
    axis = np.array([x, y, z])
    n = np.linalg.norm(axis)
    if n > 1e-12 and angle > 0:
        sign = 1.0 if w >= 0 else -1.0
        e[3:] = sign * axis / n * angle
    return e


def _jacobian(chain: KinematicChain, q: JointConfig, h: float = 1e-6) -> np.ndarray:
    """6xN Jacobian by central finite differences of fk."""
    J = np.zeros((6, chain.n_joints))
    for i in range(chain.n_joints):
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        fp, _ = fk(chain, qp)
        fm, _ = fk(chain, qm)
        J[:3, i] = (fp.translation - fm.translation) / (2 * h)
        dr = fp.rotation.compose(fm.rotation.inverse())
        w, x, y, z = dr.quat
        axis = np.array([x, y, z])
        n = np.linalg.norm(axis)
        angle = 2.0 * math.atan2(n, abs(w))
        if n > 1e-15:
            sign = 1.0 if w >= 0 else -1.0
            J[3:, i] = sign * axis / n * angle / (2 * h)
    return J


def ik(
    chain: KinematicChain,
    target: Pose,
    seed_config: JointConfig | None = None,
    pos_tol: float = 1e-3,
    rot_tol: float = 1e-2,
    restarts: int = 10,
    max_iterations: int = 120,
    damping: float = 0.1,
    restart_seed: int = 0,
) -> JointConfig:
    """Damped least-squares IK with joint-limit clamping and random restarts.

    Returns a configuration whose fk matches the target within the
    tolerances and lies within limits. Deterministic for fixed arguments.

    Raises:
        NoSolution: all attempts failed to converge.
    """
    rng = np.random.default_rng(restart_seed)
    lo, hi = chain.limits_lo, chain.limits_hi
    if seed_config is None:
        seed_config = chain.mid_config()
    seeds = [np.asarray(seed_config, dtype=float)]
    for _ in range(restarts):
        seeds.append(rng.uniform(lo, hi))

    for q0 in seeds:
        q = np.clip(q0, lo, hi)
        for _ in range(max_iterations):
            current, _ = fk(chain, q)
            e = _pose_error(current, target)
            if np.linalg.norm(e[:3]) <= pos_tol and np.linalg.norm(e[3:]) <= rot_tol:
                return q
            J = _jacobian(chain, q)
            JJt = J @ J.T + (damping**2) * np.eye(6)
            dq = J.T @ np.linalg.solve(JJt, e)
            step = np.linalg.norm(dq)
            if step > 0.5:
                dq *= 0.5 / step
            q = np.clip(q + dq, lo, hi)
        current, _ = fk(chain, q)
        e = _pose_error(current, target)
        if np.linalg.norm(e[:3]) <= pos_tol and np.linalg.norm(e[3:]) <= rot_tol:
            return q
    raise NoSolution("inverse kinematics failed for target pose")


def capsule_segments_world(chain: KinematicChain, q: JointConfig) -> list[tuple[np.ndarray, np.ndarray, float]]:
    _, links = fk(chain, q)
    out = []
    for cap in chain.capsules:
        pose = links[cap.link]
        out.append((pose.apply(cap.p0), pose.apply(cap.p1), cap.radius))
    return out


def _segment_point_distances(p0: np.ndarray, p1: np.ndarray, points: np.ndarray) -> np.ndarray:
    d = p1 - p0
    L2 = float(d @ d)
    if L2 < 1e-18:
        return np.linalg.norm(points - p0, axis=1)
    t = np.clip((points - p0) @ d / L2, 0.0, 1.0)
    closest = p0 + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1)


def min_clearance(
    chain: KinematicChain, q: JointConfig, obstacles: PointCloud | VoxelGrid
) -> float:
    """Smallest (distance - radius) from any link capsule to the obstacles."""
    best = math.inf
    for p0, p1, r in capsule_segments_world(chain, q):
        if isinstance(obstacles, PointCloud):
            if len(obstacles) == 0:
                continue
            mid = 0.5 * (p0 + p1)
            reach = 0.5 * np.linalg.norm(p1 - p0) + r + 0.5
            idx = obstacles.kdtree.query_ball_point(mid, reach)
            if idx:
                d = _segment_point_distances(p0, p1, obstacles.points[idx]).min()
            else:
                d, _ = obstacles.kdtree.query(mid)
                d -= 0.5 * np.linalg.norm(p1 - p0)
            best = min(best, d - r)
        else:
            if len(obstacles) == 0:
                continue
            seg = np.linalg.norm(p1 - p0)
            n = max(2, int(math.ceil(seg / (0.5 * obstacles.voxel_size))) + 1)
            for t in np.linspace(0.0, 1.0, n):
                sd = obstacles.signed_distance(p0 + t * (p1 - p0))
                best = min(best, sd - r)
    return best


def collision_free(
    chain: KinematicChain,
    q: JointConfig,
    obstacles: PointCloud | VoxelGrid,
    clearance: float = 0.0,
) -> bool:
    """True iff every capsule keeps at least ``clearance`` from all obstacles.

    The boundary is free: a point at exactly radius + clearance passes
    (a 1e-12 slack absorbs float rounding at the boundary).
    """
    return min_clearance(chain, q, obstacles) >= clearance - 1e-12


def config_distance(a: JointConfig, b: JointConfig, weights=None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if weights is None:
        weights = np.ones_like(a)
    w = np.asarray(weights, dtype=float)
    return float(np.sqrt(np.sum(w * (a - b) ** 2)))


def joint_limit_proximity(chain: KinematicChain, q: JointConfig) -> float:
    """Max over joints of closeness to the nearer limit: 0 mid-range, 1 at a limit."""
    q = np.asarray(q, dtype=float)
    if not chain.within_limits(q):
        raise OutOfLimits("configuration outside joint limits")
    lo, hi = chain.limits_lo, chain.limits_hi
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    return float(np.max(np.abs(q - mid) / half))


def plan_joint_path(
    chain: KinematicChain,
    q_from: JointConfig,
    q_to: JointConfig,
    obstacles: PointCloud | VoxelGrid | None,
    clearance: float = 0.01,
    n_waypoints: int = 8,
    max_iterations: int = 40,
    step: float = 0.05,
) -> list[JointConfig]:
    """Straight-line joint-space path, nudged off obstacles by penalty descent.

    Interior waypoints descend a hinge penalty on capsule clearance using a
    numeric gradient while endpoints stay fixed. Returns the waypoint list;
    the caller decides whether residual collisions are acceptable.
    """
    q_from = np.asarray(q_from, dtype=float)
    q_to = np.asarray(q_to, dtype=float)
    ts = np.linspace(0.0, 1.0, n_waypoints)
    path = [q_from + t * (q_to - q_from) for t in ts]
    if obstacles is None or (hasattr(obstacles, "__len__") and len(obstacles) == 0):
        return path

    def violation(q):
        return max(0.0, clearance - min_clearance(chain, q, obstacles))

    for _ in range(max_iterations):
        worst = max(violation(q) for q in path[1:-1]) if n_waypoints > 2 else 0.0
        if worst == 0.0:
            break
        for k in range(1, n_waypoints - 1):
            v = violation(path[k])
            if v == 0.0:
                continue
            grad = np.zeros(chain.n_joints)
            h = 1e-3
            for i in range(chain.n_joints):
                qp = path[k].copy()
                qp[i] += h
                grad[i] = (violation(qp) - v) / h
            norm = np.linalg.norm(grad)
            if norm < 1e-9:
                continue
            path[k] = np.clip(path[k] - step * grad / norm, chain.limits_lo, chain.limits_hi)
    return path
