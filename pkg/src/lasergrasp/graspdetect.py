"""Grasp candidate generation and scoring on point clouds.

Grasp frame convention: +x is the approach direction (the hand moves along
+x toward the object), +y is the closing axis (fingers travel along +-y),
+z spans the hand height. The closing region is the box swept between the
two fingers; the hand body is the two finger slabs plus the palm slab
behind them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geom import PointCloud, Pose, Rotation, Vec3, normalized


class NoNormals(Exception):
    """Candidate generation requires a cloud with estimated normals."""


class EmptyRegion(Exception):
    """Closing-region indices no longer match the cloud."""


@dataclass(frozen=True)
class HandModel:
    """Parallel-jaw gripper dimensions (meters).

    finger_length is the closing-region depth along the approach axis,
    hand_height the extent along the axis orthogonal to approach and
    closing. Defaults approximate a Baxter-class parallel gripper.
    """

    finger_length: float = 0.06
    finger_thickness: float = 0.01
    hand_height: float = 0.02
    max_aperture: float = 0.08
    palm_depth: float = 0.02

    def __post_init__(self):
        dims = (
            self.finger_length,
            self.finger_thickness,
            self.hand_height,
            self.max_aperture,
            self.palm_depth,
        )
        if any(d <= 0 for d in dims):
            raise ValueError("hand dimensions must be positive")
        if self.max_aperture <= 2 * self.finger_thickness:
            raise ValueError("max_aperture must exceed twice the finger thickness")

    def outer_width(self, aperture: float) -> float:
        return aperture + 2.0 * self.finger_thickness

    def body_boxes(self, aperture: float) -> list[tuple[np.ndarray, np.ndarray]]:
        """Finger and palm boxes as (lo, hi) corners in the grasp frame."""
        L, t, hh = self.finger_length, self.finger_thickness, 0.5 * self.hand_height
        a = 0.5 * aperture
        return [
            (np.array([0.0, a, -hh]), np.array([L, a + t, hh])),
            (np.array([0.0, -a - t, -hh]), np.array([L, -a, hh])),
            (np.array([-self.palm_depth, -a - t, -hh]), np.array([0.0, a + t, hh])),
        ]

    def region_box(self, aperture: float) -> tuple[np.ndarray, np.ndarray]:
        hh = 0.5 * self.hand_height
        a = 0.5 * aperture
        return np.array([0.0, -a, -hh]), np.array([self.finger_length, a, hh])

    def to_dict(self) -> dict:
        return {
            "finger_length": self.finger_length,
            "finger_thickness": self.finger_thickness,
            "hand_height": self.hand_height,
            "max_aperture": self.max_aperture,
            "palm_depth": self.palm_depth,
        }

    @staticmethod
    def from_dict(d: dict) -> "HandModel":
        return HandModel(**d)


@dataclass(frozen=True)
class GraspCandidate:
    """Collision-free hand pose whose closing region contains cloud points."""

    pose: Pose
    aperture: float
    sample_index: int
    closing_region_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.closing_region_indices, dtype=int)
        if idx.size == 0:
            raise ValueError("closing region must be nonempty")
        object.__setattr__(self, "closing_region_indices", idx)

    def region_centroid(self, cloud: PointCloud) -> Vec3:
        return cloud.points[self.closing_region_indices].mean(axis=0)

    def approach_axis(self) -> Vec3:
        return self.pose.rotation.as_matrix()[:, 0]

    def closing_axis(self) -> Vec3:
        return self.pose.rotation.as_matrix()[:, 1]


@dataclass(frozen=True)
class GraspImage:
    """Three orthogonal 60x60 projections of the closing-region points.

    Each grid has 5 channels: occupancy, mean height along the projected-out
    axis (normalized to the region extent), and the mean surface normal.
    """

    along_approach: np.ndarray
    along_closing: np.ndarray
    along_hand_axis: np.ndarray
    candidate_id: int = 0

    GRID: int = 60


@dataclass(frozen=True)
class GraspHypothesis:
    candidate: GraspCandidate
    score: float
    scorer_id: str

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")


class Scorer(Protocol):
    scorer_id: str

    def score(self, candidate: GraspCandidate, image: GraspImage, cloud: PointCloud) -> float:
        ...


@dataclass(frozen=True)
class GenerationParams:
    n_samples: int = 400
    n_orientations: int = 8
    min_region_points: int = 10
    neighborhood_radius: float = 0.02
    approach_standoff: float = 0.02


def _region_mask(points_h: np.ndarray, hand: HandModel, aperture: float) -> np.ndarray:
    lo, hi = hand.region_box(aperture)
    return np.all((points_h >= lo) & (points_h <= hi), axis=1)


def _body_hit(points_h: np.ndarray, hand: HandModel, aperture: float) -> bool:
    for lo, hi in hand.body_boxes(aperture):
        if np.any(np.all((points_h >= lo) & (points_h <= hi), axis=1)):
            return True
    return False


def generate_candidates(
    cloud: PointCloud,
    hand: HandModel,
    params: GenerationParams = GenerationParams(),
    seed: int = 0,
    sample_indices: np.ndarray | None = None,
) -> list[GraspCandidate]:
    """Hypothesize grasp poses by sliding the hand onto sampled surface points.

    For each sampled point a local frame is built from its normal and the
    principal curvature axis (smallest eigenvector of the neighborhood's
    normal covariance). For each rotation about the curvature axis the hand
    slides along the approach axis until the body would touch the cloud,
    backs off by half a finger thickness, and is kept if the body is clear
    and the closing region holds at least min_region_points. The aperture is
    shrunk to bound the region points plus a 1cm margin.

    Args:
        cloud: input cloud with valid normals (NaN rows are skipped).
        hand: gripper geometry.
        params: sampling and acceptance parameters.
        seed: RNG seed for sample selection; results are deterministic.
        sample_indices: evaluate exactly these cloud indices instead of
            sampling (used by equivariance tests).

    Returns:
        Accepted candidates; empty list when nothing qualifies.
    """
    if len(cloud) == 0:
        return []
    if cloud.normals is None:
        raise NoNormals("cloud has no normals")

    valid = np.isfinite(cloud.normals).all(axis=1)
    valid_idx = np.nonzero(valid)[0]
    if valid_idx.size == 0:
        return []

    if sample_indices is None:
        rng = np.random.default_rng(seed)
        n = min(params.n_samples, valid_idx.size)
        sample_indices = rng.choice(valid_idx, size=n, replace=False)
    else:
        sample_indices = np.asarray(sample_indices, dtype=int)

    # points that can possibly interact with the hand during the slide
    reach = (
        hand.finger_length
        + hand.palm_depth
        + params.approach_standoff
        + 0.5 * hand.outer_width(hand.max_aperture)
        + 0.5 * hand.hand_height
    )

    L = hand.finger_length
    t = hand.finger_thickness
    half_h = 0.5 * hand.hand_height
    half_a = 0.5 * hand.max_aperture

    candidates: list[GraspCandidate] = []
    for s in sample_indices:
        sample = cloud.points[s]
        normal = cloud.normals[s]
        if not np.isfinite(normal).all():
            continue

        neigh = cloud.kdtree.query_ball_point(sample, params.neighborhood_radius)
        neigh_normals = cloud.normals[neigh]
        neigh_normals = neigh_normals[np.isfinite(neigh_normals).all(axis=1)]
        if len(neigh_normals) >= 3:
            cov = neigh_normals.T @ neigh_normals
            _, evecs = np.linalg.eigh(cov)
            curvature_axis = evecs[:, 0]
        else:
            curvature_axis = _any_perpendicular(normal)

        approach0 = -normal
        # hand z along the curvature axis, approach projected perpendicular
        z_axis = curvature_axis - (curvature_axis @ approach0) * approach0
        if np.linalg.norm(z_axis) < 1e-9:
            z_axis = _any_perpendicular(approach0)
        z_axis = normalized(z_axis)

        # all points able to touch the hand anywhere along the slide
        ball = np.array(sorted(cloud.kdtree.query_ball_point(sample, reach)), dtype=int)
        local = cloud.points[ball] - sample

        for k in range(params.n_orientations):
            theta = -0.5 * math.pi + k * math.pi / params.n_orientations
            rot_z = Rotation.from_axis_angle(z_axis, theta)
            x_axis = rot_z.apply(approach0)
            y_axis = np.cross(z_axis, x_axis)
            R = np.column_stack([x_axis, y_axis, z_axis])

            q = local @ R  # sample-relative coordinates in the grasp frame

            in_height = np.abs(q[:, 2]) <= half_h
            ay = np.abs(q[:, 1])
            finger_band = in_height & (ay >= half_a) & (ay <= half_a + t)
            palm_band = in_height & (ay <= half_a + t)

            # hand origin at sample - d * approach; advancing lowers d.
            # A finger-band point enters the fingers at d = L - qx, a
            # palm-band point reaches the palm face at d = -qx.
            d_candidates = []
            if finger_band.any():
                d_candidates.append(np.max(L - q[finger_band, 0]))
            if palm_band.any():
                d_candidates.append(np.max(-q[palm_band, 0]))
            if not d_candidates:
                continue
            d_final = max(d_candidates) + 0.5 * t
            if d_final > L + params.approach_standoff:
                continue  # hand cannot reach the surface from free space

            origin = sample - d_final * x_axis
            pose = Pose(Rotation.from_matrix(R), origin)
            rel = q + np.array([d_final, 0.0, 0.0])  # hand-origin coordinates

            if _body_hit(rel, hand, hand.max_aperture):
                continue
            region_wide = _region_mask(rel, hand, hand.max_aperture)
            if np.count_nonzero(region_wide) < params.min_region_points:
                continue

            aperture = min(
                hand.max_aperture, 2.0 * float(np.max(np.abs(rel[region_wide, 1]))) + 0.01
            )
            region = _region_mask(rel, hand, aperture)
            if np.count_nonzero(region) < params.min_region_points:
                continue
            if _body_hit(rel, hand, aperture):
                continue
            candidates.append(
                GraspCandidate(pose, aperture, int(s), ball[np.nonzero(region)[0]])
            )
    return candidates


def _any_perpendicular(v: np.ndarray) -> np.ndarray:
    axis = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    return normalized(np.cross(v, axis))


def extract_projection(
    candidate: GraspCandidate, cloud: PointCloud, hand: HandModel
) -> GraspImage:
    """Project the closing-region points onto three fixed 60x60 grids."""
    idx = candidate.closing_region_indices
    if idx.size == 0 or np.max(idx) >= len(cloud):
        raise EmptyRegion("region indices stale for this cloud")
    R = candidate.pose.rotation.as_matrix()
    pts = (cloud.points[idx] - candidate.pose.translation) @ R
    if not np.all(
        (pts >= hand.region_box(candidate.aperture)[0] - 1e-9)
        & (pts <= hand.region_box(candidate.aperture)[1] + 1e-9)
    ):
        raise EmptyRegion("region indices stale for this cloud")

    normals = None
    if cloud.normals is not None:
        normals = cloud.normals[idx] @ R
        normals = np.where(np.isfinite(normals), normals, 0.0)

    lo, hi = hand.region_box(candidate.aperture)
    extent = hi - lo
    # normalized region coordinates in [0, 1)
    u = np.clip((pts - lo) / extent, 0.0, 1.0 - 1e-12)
    cells = np.floor(u * GraspImage.GRID).astype(int)

    grids = []
    for drop in range(3):
        keep = [a for a in range(3) if a != drop]
        g = np.zeros((GraspImage.GRID, GraspImage.GRID, 5))
        count = np.zeros((GraspImage.GRID, GraspImage.GRID))
        rows, cols = cells[:, keep[0]], cells[:, keep[1]]
        np.add.at(count, (rows, cols), 1.0)
        np.add.at(g[:, :, 1], (rows, cols), u[:, drop])
        if normals is not None:
            for c in range(3):
                np.add.at(g[:, :, 2 + c], (rows, cols), normals[:, c])
        occ = count > 0
        g[:, :, 0] = occ.astype(float)
        for c in range(1, 5):
            g[:, :, c] = np.divide(g[:, :, c], count, out=np.zeros_like(count), where=occ)
        grids.append(g)

    return GraspImage(grids[0], grids[1], grids[2], candidate.sample_index)


def antipodal_score(
    candidate: GraspCandidate,
    cloud: PointCloud,
    friction_half_angle: float = math.radians(20.0),
    seed: int = 0,
    max_points: int = 500,
) -> float:
    """Analytic antipodal quality in [0, 1].

    score = q * c where q is 1 iff some point pair in the closing region has
    anti-parallel normals within the friction half-angle with both normals
    within that angle of +-closing axis, and c is the fraction of evaluated
    region points participating in such a pair. Regions larger than
    max_points are uniformly subsampled with the given seed.
    """
    if cloud.normals is None:
        return 0.0
    idx = candidate.closing_region_indices
    normals = cloud.normals[idx]
    finite = np.isfinite(normals).all(axis=1)
    normals = normals[finite]
    if len(normals) == 0:
        return 0.0
    if len(normals) > max_points:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(normals), size=max_points, replace=False)
        normals = normals[pick]

    closing = candidate.closing_axis()
    cos_phi = math.cos(friction_half_angle)
    along = normals @ closing
    near_axis = np.abs(along) >= cos_phi
    if not near_axis.any():
        return 0.0
    sub = normals[near_axis]
    dots = sub @ sub.T
    pair = dots <= -cos_phi
    participates = pair.any(axis=1)
    if not participates.any():
        return 0.0
    c = float(np.count_nonzero(participates)) / float(len(normals))
    return min(1.0, c)


@dataclass(frozen=True)
class AntipodalScorer:
    """Default scorer: analytic antipodal test on raw region geometry."""

    friction_half_angle: float = math.radians(20.0)
    seed: int = 0
    scorer_id: str = "antipodal"

    def score(self, candidate: GraspCandidate, image: GraspImage, cloud: PointCloud) -> float:
        return antipodal_score(candidate, cloud, self.friction_half_angle, self.seed)


@dataclass(frozen=True)
class ConstantScorer:
    value: float = 1.0
    scorer_id: str = "constant"

    def score(self, candidate: GraspCandidate, image: GraspImage, cloud: PointCloud) -> float:
        return self.value


def score_candidates(
    candidates: list[GraspCandidate],
    cloud: PointCloud,
    scorer: Scorer | None = None,
    hand: HandModel = HandModel(),
) -> list[GraspHypothesis]:
    """Score each candidate; order preserved, one hypothesis per candidate."""
    if scorer is None:
        scorer = AntipodalScorer()
    out = []
    for cand in candidates:
        image = extract_projection(cand, cloud, hand)
        out.append(GraspHypothesis(cand, float(scorer.score(cand, image, cloud)), scorer.scorer_id))
    return out
