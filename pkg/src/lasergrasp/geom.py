"""Core geometric types and point-cloud utilities.

Conventions used throughout the package: SI units (meters, radians,
seconds), world frame z-up with gravity along (0, 0, -1), quaternions in
(w, x, y, z) order, and inclusive (<=) boundary comparisons for all
radius/range tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

Vec3 = np.ndarray  # shape (3,) float64

_QUAT_NORM_TOL = 1e-9
_UNIT_NORMAL_TOL = 1e-6


class DegenerateNeighborhood(Exception):
    """Local covariance has rank < 2; no stable normal exists."""


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=float)


def normalized(v: Vec3) -> Vec3:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


@dataclass(frozen=True)
class Rotation:
    """Rotation stored as a unit quaternion (w, x, y, z)."""

    quat: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components (w,x,y,z)")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if abs(n - 1.0) > _QUAT_NORM_TOL:
            q = q / n
        object.__setattr__(self, "quat", q)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis: Vec3, angle: float) -> "Rotation":
        a = normalized(np.asarray(axis, dtype=float))
        half = 0.5 * angle
        s = math.sin(half)
        return Rotation(np.array([math.cos(half), s * a[0], s * a[1], s * a[2]]))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        m = np.asarray(m, dtype=float)
        t = np.trace(m)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        q = np.array([w, x, y, z])
        return Rotation(q / np.linalg.norm(q))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate one vector (3,) or many (N, 3)."""
        m = self.as_matrix()
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return m @ v
        return v @ m.T

    def compose(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.quat
        w2, x2, y2, z2 = other.quat
        q = np.array(
            [
                w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            ]
        )
        return Rotation(q / np.linalg.norm(q))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle between two rotations."""
        d = abs(float(np.dot(self.quat, other.quat)))
        return 2.0 * math.acos(min(1.0, d))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation * p_local + translation."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rt(rotation: Rotation, translation) -> "Pose":
        return Pose(rotation, np.asarray(translation, dtype=float))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.rotation.apply(p) + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self * other (apply other first, then self)."""
        return Pose(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class PointCloud:
    """Point cloud with optional per-point normals, colors and object labels.

    ``frame`` is the pose of the cloud's reference frame in the world; points
    are expressed in that frame. Normals may contain NaN rows marking points
    whose neighborhood was degenerate; all finite normals are unit vectors.
    Labels carry simulation ground truth (positive ids for objects, negative
    for furniture) and are absent for real sensor data.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None
    frame: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.normals is not None:
            nr = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nr) != n:
                raise ValueError("normals length mismatch")
            finite = np.isfinite(nr).all(axis=1)
            if finite.any():
                norms = np.linalg.norm(nr[finite], axis=1)
                if np.any(np.abs(norms - 1.0) > _UNIT_NORMAL_TOL):
                    raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", nr)
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=float).reshape(-1, 3)
            if len(c) != n:
                raise ValueError("colors length mismatch")
            object.__setattr__(self, "colors", c)
        if self.labels is not None:
            lb = np.asarray(self.labels, dtype=int).reshape(-1)
            if len(lb) != n:
                raise ValueError("labels length mismatch")
            object.__setattr__(self, "labels", lb)

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def kdtree(self) -> cKDTree:
        """k-d tree over the points, built once on first use."""
        return cKDTree(self.points)

    def select(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=int)
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.colors is None else self.colors[idx],
            None if self.labels is None else self.labels[idx],
            self.frame,
        )


def merge_clouds(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate clouds expressed in the same frame.

    Optional channels are kept only if every input has them.
    """
    if not clouds:
        return PointCloud(np.zeros((0, 3)))
    pts = np.vstack([c.points for c in clouds])
    normals = None
    if all(c.normals is not None for c in clouds):
        normals = np.vstack([c.normals for c in clouds])
    colors = None
    if all(c.colors is not None for c in clouds):
        colors = np.vstack([c.colors for c in clouds])
    labels = None
    if all(c.labels is not None for c in clouds):
        labels = np.concatenate([c.labels for c in clouds])
    return PointCloud(pts, normals, colors, labels, clouds[0].frame)


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Rigidly transform points and normals; colors/labels preserved."""
    pts = pose.apply(cloud.points) if len(cloud) else cloud.points.copy()
    normals = cloud.normals
    if normals is not None and len(normals):
        normals = pose.rotation.apply(normals)
    return PointCloud(pts, normals, cloud.colors, cloud.labels, cloud.frame)


def estimate_normals(
    cloud: PointCloud, neighbor_count: int = 20, viewpoint: Vec3 | None = None
) -> PointCloud:
    """Estimate unit normals from local covariance, oriented toward viewpoint.

    Each point's normal is the smallest eigenvector of the covariance of its
    ``neighbor_count`` nearest neighbors; its sign is flipped so the normal
    faces the viewpoint. Points with a rank-deficient neighborhood get a NaN
    normal (excluded from candidate sampling downstream).

    Raises:
        DegenerateNeighborhood: if no point has a well-defined normal.
        ValueError: if neighbor_count < 3 or the cloud is too small.
    """
    if neighbor_count < 3:
        raise ValueError("neighbor_count must be >= 3")
    if len(cloud) < neighbor_count:
        raise ValueError("cloud smaller than neighbor_count")
    if viewpoint is None:
        viewpoint = np.zeros(3)
    viewpoint = np.asarray(viewpoint, dtype=float)

    _, idx = cloud.kdtree.query(cloud.points, k=neighbor_count)
    neigh = cloud.points[idx]  # (N, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neighbor_count
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues

    normals = evecs[:, :, 0].copy()
    # rank < 2 when the two smallest eigenvalues both vanish vs the largest
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = evals[:, 1] / scale < 1e-9
    to_view = viewpoint[None, :] - cloud.points
    flip = np.einsum("ni,ni->n", normals, to_view) < 0.0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / norms
    normals[degenerate] = np.nan
    if degenerate.all():
        raise DegenerateNeighborhood("every neighborhood is rank-deficient")
    return PointCloud(cloud.points, normals, cloud.colors, cloud.labels, cloud.frame)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel; majority label, mean color/normal."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    n_vox = len(counts)

    pts = np.zeros((n_vox, 3))
    for d in range(3):
        pts[:, d] = np.bincount(inverse, weights=cloud.points[:, d], minlength=n_vox)
    pts /= counts[:, None]

    normals = None
    if cloud.normals is not None:
        normals = np.full((n_vox, 3), np.nan)
        valid = np.isfinite(cloud.normals).all(axis=1)
        acc = np.zeros((n_vox, 3))
        nvalid = np.bincount(inverse[valid], minlength=n_vox)
        for d in range(3):
            acc[:, d] = np.bincount(
                inverse[valid], weights=cloud.normals[valid, d], minlength=n_vox
            )
        lengths = np.linalg.norm(acc, axis=1)
        ok = (nvalid > 0) & (lengths > 1e-12)
        normals[ok] = acc[ok] / lengths[ok, None]

    colors = None
    if cloud.colors is not None:
        colors = np.zeros((n_vox, 3))
        for d in range(3):
            colors[:, d] = np.bincount(inverse, weights=cloud.colors[:, d], minlength=n_vox)
        colors /= counts[:, None]

    labels = None
    if cloud.labels is not None:
        labels = np.zeros(n_vox, dtype=int)
        for v in range(n_vox):
            members = cloud.labels[inverse == v]
            vals, cnt = np.unique(members, return_counts=True)
            labels[v] = vals[np.argmax(cnt)]

    return PointCloud(pts, normals, colors, labels, cloud.frame)


def radius_search(cloud: PointCloud, center: Vec3, radius: float) -> list[int]:
    """Indices of points with ||p - center|| <= radius (inclusive)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if len(cloud) == 0:
        return []
    idx = cloud.kdtree.query_ball_point(np.asarray(center, dtype=float), radius)
    return sorted(idx)


class VoxelGrid:
    """Occupancy grid over axis-aligned cubic voxels with signed-distance queries.

    Signed distance is exact outside the occupied set (distance to the nearest
    occupied voxel box) and negative inside an occupied voxel.
    """

    def __init__(self, origin: Vec3, voxel_size: float, occupied: Iterable[tuple[int, int, int]]):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(origin, dtype=float)
        self.voxel_size = float(voxel_size)
        cells = np.array(sorted(set(map(tuple, occupied))), dtype=np.int64).reshape(-1, 3)
        self._cells = cells
        self._cell_set = set(map(tuple, cells))
        if len(cells):
            self._centers = self.origin + (cells + 0.5) * self.voxel_size
            self._tree = cKDTree(self._centers)
        else:
            self._centers = np.zeros((0, 3))
            self._tree = None

    @staticmethod
    def from_points(points: np.ndarray, voxel_size: float, origin: Vec3 | None = None) -> "VoxelGrid":
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if origin is None:
            origin = np.zeros(3)
        origin = np.asarray(origin, dtype=float)
        keys = np.floor((points - origin) / voxel_size).astype(np.int64)
        return VoxelGrid(origin, voxel_size, map(tuple, keys))

    @staticmethod
    def from_cloud(cloud: PointCloud, voxel_size: float) -> "VoxelGrid":
        return VoxelGrid.from_points(cloud.points, voxel_size)

    def __len__(self) -> int:
        return len(self._cells)

    @property
    def occupied_centers(self) -> np.ndarray:
        return self._centers

    def contains(self, p: Vec3) -> bool:
        key = tuple(np.floor((np.asarray(p, dtype=float) - self.origin) / self.voxel_size).astype(np.int64))
        return key in self._cell_set

    def signed_distance(self, p: Vec3) -> float:
        sd, _ = self.signed_distance_gradient(p)
        return sd

    def signed_distance_gradient(self, p: Vec3) -> tuple[float, np.ndarray]:
        """Signed distance and its gradient (unit vector pointing away)."""
        if self._tree is None:
            raise ValueError("grid is empty")
        p = np.asarray(p, dtype=float)
        h = 0.5 * self.voxel_size
        d0, i0 = self._tree.query(p)
        # any voxel whose box could beat the current best has its center
        # within d0 + half-diagonal
        cand = self._tree.query_ball_point(p, d0 + h * math.sqrt(3.0) + 1e-12)
        best = math.inf
        best_grad = np.zeros(3)
        for i in cand:
            c = self._centers[i]
            q = np.abs(p - c) - h
            outside = np.maximum(q, 0.0)
            out_d = float(np.linalg.norm(outside))
            in_d = float(min(np.max(q), 0.0))
            sd = out_d + in_d
            if sd < best:
                best = sd
                if out_d > 0.0:
                    grad = np.sign(p - c) * outside / out_d
                else:
                    # inside: gradient points out through the nearest face
                    axis = int(np.argmax(q))
                    grad = np.zeros(3)
                    grad[axis] = math.copysign(1.0, p[axis] - c[axis])
                best_grad = grad
        return best, best_grad


def signed_distance(grid: VoxelGrid, p: Vec3) -> float:
    """Signed distance from p to the grid's occupied set (>=0 outside)."""
    return grid.signed_distance(p)


# --- point-cloud file format ------------------------------------------------
#
# ASCII, one header line then one line per point:
#   cloudv1 <n> <has_normals:0|1> <has_colors:0|1> <has_labels:0|1>
#   x y z [nx ny nz] [r g b] [label]
# Floats carry 9 significant digits.


def save_cloud(path, cloud: PointCloud) -> None:
    hn = int(cloud.normals is not None)
    hc = int(cloud.colors is not None)
    hl = int(cloud.labels is not None)
    lines = [f"cloudv1 {len(cloud)} {hn} {hc} {hl}"]
    for i in range(len(cloud)):
        parts = [f"{v:.9g}" for v in cloud.points[i]]
        if hn:
            parts += [f"{v:.9g}" for v in cloud.normals[i]]
        if hc:
            parts += [f"{v:.9g}" for v in cloud.colors[i]]
        if hl:
            parts.append(str(int(cloud.labels[i])))
        lines.append(" ".join(parts))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_cloud(path) -> PointCloud:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 5 or header[0] != "cloudv1":
            raise ValueError("not a cloudv1 file")
        n, hn, hc, hl = (int(x) for x in header[1:])
        pts = np.zeros((n, 3))
        normals = np.zeros((n, 3)) if hn else None
        colors = np.zeros((n, 3)) if hc else None
        labels = np.zeros(n, dtype=int) if hl else None
        for i in range(n):
            vals = f.readline().split()
            pts[i] = [float(v) for v in vals[:3]]
            k = 3
            if hn:
                normals[i] = [float(v) for v in vals[k : k + 3]]
                k += 3
            if hc:
                colors[i] = [float(v) for v in vals[k : k + 3]]
                k += 3
            if hl:
                labels[i] = int(vals[k])
    return PointCloud(pts, normals, colors, labels)
