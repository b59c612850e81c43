"""Information-gathering trajectory planning: sample a feasible viewpoint
pair on a sphere around the point of interest, then optimize a look-at
trajectory between them.

Constraints carried by every plan: viewpoints on the 0.42m sphere, pair
closer than 0.22m, unoccluded sight lines, collision-free IK at the
endpoints, waypoints at least the sensor's 0.40m minimum range from the
point of interest, and the optical axis through the point of interest at
every waypoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arm import KinematicChain, NoSolution, collision_free, ik
from .geom import PointCloud, Pose, Rotation, Vec3, VoxelGrid, normalized


class NoFeasiblePair(Exception):
    """No feasible viewpoint pair found within the sampling budget."""


class OptimizationFailed(Exception):
    """Waypoint optimization could not satisfy the constraints."""


@dataclass(frozen=True)
class PlannerParams:
    sphere_radius: float = 0.42
    max_pair_distance: float = 0.22
    min_sensor_range: float = 0.40
    max_samples: int = 5000
    waypoint_count: int = 15
    clearance_margin: float = 0.03
    # obstacle points this close to the POI are ignored by the sight-line
    # test; the POI itself sits on the target surface
    poi_exclusion: float = 0.08
    lambda_clearance: float = 100.0
    lambda_range: float = 100.0
    max_iterations: int = 200
    constraint_pad: float = 1e-3  # internal over-tightening of the hinges

    def __post_init__(self):
        if self.sphere_radius <= self.min_sensor_range:
            raise ValueError("sphere_radius must exceed min_sensor_range")
        if self.max_pair_distance <= 0:
            raise ValueError("max_pair_distance must be positive")


@dataclass(frozen=True)
class ViewPose:
    """Sensor pose whose optical axis (+z) points at the point of interest."""

    position: np.ndarray
    orientation: Rotation

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))

    @property
    def optical_axis(self) -> Vec3:
        return self.orientation.as_matrix()[:, 2]

    def as_pose(self) -> Pose:
        return Pose(self.orientation, self.position)


@dataclass(frozen=True)
class SensorTrajectory:
    waypoints: tuple[ViewPose, ...]
    poi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        object.__setattr__(self, "poi", np.asarray(self.poi, dtype=float))
        for w in self.waypoints:
            to_poi = normalized(self.poi - w.position)
            if abs(float(w.optical_axis @ to_poi) - 1.0) > 1e-9:
                raise ValueError("waypoint violates the look-at invariant")

    def positions(self) -> np.ndarray:
        return np.array([w.position for w in self.waypoints])

    def path_length(self) -> float:
        p = self.positions()
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def look_at_pose(position: Vec3, poi: Vec3, up_hint: Vec3 | None = None) -> ViewPose:
    """Sensor pose at ``position`` with the optical axis through ``poi``.

    The remaining roll freedom is fixed by Gram-Schmidt against up_hint
    (world +z by default). A degenerate up_hint parallel to the axis falls
    back to a fixed perpendicular axis, so the result is always valid.
    """
    position = np.asarray(position, dtype=float)
    poi = np.asarray(poi, dtype=float)
    if np.allclose(position, poi):
        raise ValueError("position must differ from poi")
    if up_hint is None:
        up_hint = np.array([0.0, 0.0, 1.0])
    up = normalized(np.asarray(up_hint, dtype=float))
    forward = normalized(poi - position)
    if abs(float(up @ forward)) > 1.0 - 1e-12:
        up = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x_axis = normalized(np.cross(up, forward))
    y_axis = np.cross(forward, x_axis)
    R = np.column_stack([x_axis, y_axis, forward])
    return ViewPose(position, Rotation.from_matrix(R))


def sight_line_clear(
    position: Vec3, poi: Vec3, obstacles: PointCloud, params: PlannerParams
) -> bool:
    """True when the segment position->poi keeps clearance_margin from all
    obstacle points, ignoring points within poi_exclusion of the poi."""
    if len(obstacles) == 0:
        return True
    position = np.asarray(position, dtype=float)
    poi = np.asarray(poi, dtype=float)
    seg = poi - position
    seg_len = float(np.linalg.norm(seg))
    mid = 0.5 * (position + poi)
    idx = obstacles.kdtree.query_ball_point(mid, 0.5 * seg_len + params.clearance_margin + 1e-9)
    if not idx:
        return True
    pts = obstacles.points[idx]
    keep = np.linalg.norm(pts - poi, axis=1) > params.poi_exclusion
    pts = pts[keep]
    if len(pts) == 0:
        return True
    t = np.clip((pts - position) @ seg / (seg_len**2), 0.0, 1.0)
    closest = position + t[:, None] * seg
    d = np.linalg.norm(pts - closest, axis=1)
    return bool(np.min(d) >= params.clearance_margin - 1e-12)


def view_feasible(
    position: Vec3,
    poi: Vec3,
    obstacles: PointCloud,
    arm: KinematicChain | None,
    params: PlannerParams,
):
    """Feasibility of a single viewpoint; returns (ok, ik_config_or_None)."""
    if not sight_line_clear(position, poi, obstacles, params):
        return False, None
    if arm is None:
        return True, None
    pose = look_at_pose(position, poi).as_pose()
    try:
        q = ik(arm, pose, restarts=4, max_iterations=80)
    except NoSolution:
        return False, None
    if not collision_free(arm, q, obstacles):
        return False, None
    return True, q


def sample_feasible_pair(
    poi: Vec3,
    obstacles: PointCloud,
    arm: KinematicChain | None,
    params: PlannerParams = PlannerParams(),
    rng: np.random.Generator | int = 0,
) -> tuple[ViewPose, ViewPose]:
    """Rejection-sample a feasible viewpoint pair uniformly from the sphere.

    Both points land exactly on the sphere of sphere_radius about the poi,
    at most max_pair_distance apart, with clear sight lines and (when an arm
    is given) collision-free IK at the look-at poses.

    Raises:
        NoFeasiblePair: after max_samples attempts.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    poi = np.asarray(poi, dtype=float)
    if not np.all(np.isfinite(poi)):
        raise ValueError("poi must be finite")

    for _ in range(params.max_samples):
        u = rng.normal(size=(2, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        a = poi + params.sphere_radius * u[0]
        b = poi + params.sphere_radius * u[1]
        if np.linalg.norm(a - b) > params.max_pair_distance:
            continue
        ok_a, _ = view_feasible(a, poi, obstacles, arm, params)
        if not ok_a:
            continue
        ok_b, _ = view_feasible(b, poi, obstacles, arm, params)
        if not ok_b:
            continue
        return look_at_pose(a, poi), look_at_pose(b, poi)
    raise NoFeasiblePair(f"no feasible pair in {params.max_samples} samples")


def geodesic_arc(pair, poi: Vec3, count: int) -> np.ndarray:
    """Waypoint positions along the great-circle arc between the pair."""
    poi = np.asarray(poi, dtype=float)
    r0 = pair[0].position - poi
    r1 = pair[1].position - poi
    n0, n1 = np.linalg.norm(r0), np.linalg.norm(r1)
    u0, u1 = r0 / n0, r1 / n1
    dot = float(np.clip(u0 @ u1, -1.0, 1.0))
    omega = math.acos(dot)
    ts = np.linspace(0.0, 1.0, count)
    if omega < 1e-12:
        dirs = np.tile(u0, (count, 1))
    else:
        s = math.sin(omega)
        dirs = (np.sin((1.0 - ts) * omega) / s)[:, None] * u0 + (
            np.sin(ts * omega) / s
        )[:, None] * u1
    radii = n0 + ts * (n1 - n0)
    return poi + dirs * radii[:, None]


def waypoint_objective(
    positions: np.ndarray,
    poi: Vec3,
    obstacles: VoxelGrid | None,
    params: PlannerParams,
    clearance: float | None = None,
    min_range: float | None = None,
) -> float:
    """Smoothness plus hinge penalties for clearance and minimum range."""
    if clearance is None:
        clearance = params.clearance_margin
    if min_range is None:
        min_range = params.min_sensor_range
    x = np.asarray(positions, dtype=float)
    J = float(np.sum(np.linalg.norm(np.diff(x, axis=0), axis=1) ** 2))
    for p in x:
        if obstacles is not None and len(obstacles):
            h = max(0.0, clearance - obstacles.signed_distance(p))
            J += params.lambda_clearance * h * h
        r = max(0.0, min_range - float(np.linalg.norm(p - poi)))
        J += params.lambda_range * r * r
    return J


def waypoint_gradient(
    positions: np.ndarray,
    poi: Vec3,
    obstacles: VoxelGrid | None,
    params: PlannerParams,
    clearance: float | None = None,
    min_range: float | None = None,
) -> np.ndarray:
    """Analytic gradient of waypoint_objective w.r.t. interior waypoints.

    Rows for the two endpoints are zero (they stay fixed).
    """
    if clearance is None:
        clearance = params.clearance_margin
    if min_range is None:
        min_range = params.min_sensor_range
    x = np.asarray(positions, dtype=float)
    g = np.zeros_like(x)
    for i in range(1, len(x) - 1):
        g[i] += 2.0 * (2.0 * x[i] - x[i - 1] - x[i + 1])
        if obstacles is not None and len(obstacles):
            sd, grad_sd = obstacles.signed_distance_gradient(x[i])
            h = clearance - sd
            if h > 0.0:
                g[i] += -2.0 * params.lambda_clearance * h * grad_sd
        diff = x[i] - poi
        dist = float(np.linalg.norm(diff))
        r = min_range - dist
        if r > 0.0 and dist > 1e-12:
            g[i] += -2.0 * params.lambda_range * r * diff / dist
    return g


def _constraints_met(x: np.ndarray, poi, obstacles, params: PlannerParams) -> bool:
    for p in x:
        if obstacles is not None and len(obstacles):
            if obstacles.signed_distance(p) < params.clearance_margin - 1e-12:
                return False
        if np.linalg.norm(p - poi) < params.min_sensor_range - 1e-12:
            return False
    return True


def _resample_uniform(x: np.ndarray) -> np.ndarray:
    """Redistribute waypoints to equal arc-length spacing, endpoints fixed."""
    seg = np.linalg.norm(np.diff(x, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-12:
        return x.copy()
    targets = np.linspace(0.0, total, len(x))
    out = np.empty_like(x)
    out[0], out[-1] = x[0], x[-1]
    j = 0
    for i in range(1, len(x) - 1):
        t = targets[i]
        while cum[j + 1] < t:
            j += 1
        f = (t - cum[j]) / max(cum[j + 1] - cum[j], 1e-18)
        out[i] = x[j] + f * (x[j + 1] - x[j])
    return out


def optimize_waypoints(
    traj: SensorTrajectory,
    obstacles: VoxelGrid | None,
    params: PlannerParams = PlannerParams(),
    return_history: bool = False,
):
    """Push interior waypoints to satisfy clearance and min-range constraints.

    Gradient descent with backtracking line search on the penalized
    objective; endpoints stay fixed and orientations are re-derived from
    positions, keeping the look-at exact. A trajectory whose constraints
    already hold is returned unchanged. The internal hinges are tightened by
    constraint_pad so the true constraints are met strictly at termination.

    Raises:
        OptimizationFailed: constraints still violated after max_iterations.
    """
    if len(traj.waypoints) < 3:
        raise ValueError("need at least 3 waypoints")
    x = traj.positions()
    poi = traj.poi
    history: list[float] = []

    if _constraints_met(x, poi, obstacles, params):
        return (traj, history) if return_history else traj

    pad_clear = params.clearance_margin + params.constraint_pad
    pad_range = params.min_sensor_range + params.constraint_pad

    def J(pos):
        return waypoint_objective(pos, poi, obstacles, params, pad_clear, pad_range)

    cur = J(x)
    history.append(cur)

    def push(x, cur):
        """Descend the penalized objective until the true constraints hold."""
        for _ in range(params.max_iterations):
            if _constraints_met(x, poi, obstacles, params):
                return x, cur
            g = waypoint_gradient(x, poi, obstacles, params, pad_clear, pad_range)
            gnorm2 = float(np.sum(g * g))
            if gnorm2 < 1e-18:
                break
            # cap the largest per-waypoint move at 1cm to avoid overshoot kinks
            max_move = float(np.max(np.linalg.norm(g, axis=1)))
            alpha = min(0.02, 0.01 / max_move)
            accepted = False
            for _ in range(40):
                trial = x - alpha * g
                J_trial = J(trial)
                if J_trial <= cur - 1e-4 * alpha * gnorm2:
                    x, cur = trial, J_trial
                    history.append(cur)
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
        if not _constraints_met(x, poi, obstacles, params):
            raise OptimizationFailed("hinge penalties still active at convergence")
        return x, cur

    def polish(x, cur):
        """Shorten the path without leaving the feasible set."""
        for _ in range(params.max_iterations):
            g = waypoint_gradient(x, poi, obstacles, params, pad_clear, pad_range)
            gnorm2 = float(np.sum(g * g))
            if gnorm2 < 1e-14:
                break
            alpha = 0.02
            accepted = False
            while alpha > 1e-8:
                trial = x - alpha * g
                J_trial = J(trial)
                if J_trial <= cur - 1e-4 * alpha * gnorm2 and _constraints_met(
                    trial, poi, obstacles, params
                ):
                    x, cur = trial, J_trial
                    history.append(cur)
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
        return x, cur

    # push/polish/resample rounds: resampling restores near-uniform spacing;
    # it may re-enter an obstacle between feasible points, so re-push
    for _ in range(4):
        x, cur = push(x, cur)
        x, cur = polish(x, cur)
        xr = _resample_uniform(x)
        if _constraints_met(xr, poi, obstacles, params):
            x = xr
            break
        x, cur = xr, J(xr)
    if not _constraints_met(x, poi, obstacles, params):
        raise OptimizationFailed("constraints violated after resampling rounds")

    waypoints = [traj.waypoints[0]]
    for p in x[1:-1]:
        waypoints.append(look_at_pose(p, poi))
    waypoints.append(traj.waypoints[-1])
    out = SensorTrajectory(tuple(waypoints), poi)
    return (out, history) if return_history else out


def plan_info_trajectory(
    pair: tuple[ViewPose, ViewPose],
    poi: Vec3,
    obstacles: VoxelGrid | None,
    params: PlannerParams = PlannerParams(),
) -> SensorTrajectory:
    """Look-at trajectory along the optimized geodesic between the pair.

    Waypoints start on the great-circle arc and are pushed until every one
    keeps clearance_margin from the obstacle grid and min_sensor_range from
    the poi; endpoints equal the sampled pair.

    Raises:
        OptimizationFailed: when the constraints cannot be met.
    """
    positions = geodesic_arc(pair, poi, params.waypoint_count)
    # endpoint positions equal the sampled pair; orientations re-derived so
    # the look-at holds against this trajectory's poi
    waypoints = tuple(look_at_pose(p, poi) for p in positions)
    traj = SensorTrajectory(waypoints, np.asarray(poi, dtype=float))
    return optimize_waypoints(traj, obstacles, params)
