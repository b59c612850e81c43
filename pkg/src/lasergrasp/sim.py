"""Synthetic desk-scale world: primitive scenes, a depth/RGB camera model,
a pulsed laser emitter, and ground-truth oracles including simulated grasp
execution.

Scenes contain only boxes, cylinders and spheres so every query (ray cast,
containment, surface normal) has a closed form. Object labels are positive
integers; furniture pieces carry reserved negative labels. The camera looks
along +z with x right and y down; depth images store the camera-frame z
coordinate in meters, 0 marking invalid pixels.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, replace

import numpy as np

from .geom import PointCloud, Pose, Rotation, Vec3, normalized, vec3
from .graspdetect import HandModel


class BeamMiss(Exception):
    """Laser beam exits the scene without hitting anything."""


class PlacementFailure(Exception):
    """Could not place the requested objects without overlap."""


# --- primitives ---------------------------------------------------------------

BOX = "box"
CYLINDER = "cylinder"
SPHERE = "sphere"

_EPS = 1e-12


@dataclass(frozen=True)
class SceneObject:
    """A posed primitive. Dimensions by shape: box (dx, dy, dz), cylinder
    (radius, height) with axis +z, sphere (radius,). Poses place the
    primitive's centroid."""

    id: int
    shape: str
    dimensions: tuple
    pose: Pose

    def __post_init__(self):
        if self.shape not in (BOX, CYLINDER, SPHERE):
            raise ValueError(f"unknown shape {self.shape!r}")
        dims = tuple(float(d) for d in self.dimensions)
        if any(d <= 0 for d in dims):
            raise ValueError("dimensions must be positive")
        n = {BOX: 3, CYLINDER: 2, SPHERE: 1}[self.shape]
        if len(dims) != n:
            raise ValueError(f"{self.shape} needs {n} dimensions")
        object.__setattr__(self, "dimensions", dims)

    @property
    def half_height(self) -> float:
        if self.shape == BOX:
            return 0.5 * self.dimensions[2]
        if self.shape == CYLINDER:
            return 0.5 * self.dimensions[1]
        return self.dimensions[0]

    def footprint_radius(self) -> float:
        """Circumscribed radius of the horizontal footprint (upright pose)."""
        if self.shape == BOX:
            return 0.5 * math.hypot(self.dimensions[0], self.dimensions[1])
        return self.dimensions[0]

    def top_z(self) -> float:
        return self.pose.translation[2] + self.half_height

    def bottom_z(self) -> float:
        return self.pose.translation[2] - self.half_height


def _ray_cast_local(shape: str, dims: tuple, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Smallest positive hit parameter per ray in the object frame; inf = miss."""
    n = len(o)
    t_out = np.full(n, np.inf)
    if shape == BOX:
        half = 0.5 * np.asarray(dims)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        tnear = np.nanmax(np.minimum(t1, t2), axis=1)
        tfar = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tnear <= tfar) & (tfar > _EPS)
        t = np.where(tnear > _EPS, tnear, tfar)
        t_out[hit] = t[hit]
    elif shape == SPHERE:
        r = dims[0]
        a = np.einsum("ni,ni->n", d, d)
        b = 2.0 * np.einsum("ni,ni->n", o, d)
        c = np.einsum("ni,ni->n", o, o) - r * r
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        t = np.where(t1 > _EPS, t1, t2)
        hit = ok & (t > _EPS)
        t_out[hit] = t[hit]
    else:  # cylinder
        r, h = dims
        hz = 0.5 * h
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
        disc = b * b - 4 * a * c
        ok = (disc >= 0) & (a > _EPS)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-b - sq) / (2 * a)
            t2 = (-b + sq) / (2 * a)
        for t_side in (t1, t2):
            z = o[:, 2] + t_side * d[:, 2]
            hit = ok & (t_side > _EPS) & (np.abs(z) <= hz)
            t_out[hit] = np.minimum(t_out[hit], t_side[hit])
        with np.errstate(divide="ignore", invalid="ignore"):
            for cap in (-hz, hz):
                t_cap = (cap - o[:, 2]) / d[:, 2]
                x = o[:, 0] + t_cap * d[:, 0]
                y = o[:, 1] + t_cap * d[:, 1]
                hit = np.isfinite(t_cap) & (t_cap > _EPS) & (x * x + y * y <= r * r)
                t_out[hit] = np.minimum(t_out[hit], t_cap[hit])
    return t_out


def ray_cast(obj: SceneObject, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    inv = obj.pose.inverse()
    o = inv.apply(origins)
    d = inv.rotation.apply(dirs)
    return _ray_cast_local(obj.shape, obj.dimensions, o, d)


def contains(obj: SceneObject, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
    """True per point when inside the (optionally padded) primitive."""
    p = obj.pose.inverse().apply(np.asarray(points, dtype=float).reshape(-1, 3))
    if obj.shape == BOX:
        half = 0.5 * np.asarray(obj.dimensions) + pad
        return np.all(np.abs(p) <= half, axis=1)
    if obj.shape == SPHERE:
        return np.einsum("ni,ni->n", p, p) <= (obj.dimensions[0] + pad) ** 2
    r, h = obj.dimensions
    return (p[:, 0] ** 2 + p[:, 1] ** 2 <= (r + pad) ** 2) & (
        np.abs(p[:, 2]) <= 0.5 * h + pad
    )


def surface_points(obj: SceneObject, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic surface samples and outward normals, in world frame."""
    pts, nrm = _surface_points_local(obj.shape, obj.dimensions, spacing)
    return obj.pose.apply(pts), obj.pose.rotation.apply(nrm)


def _grid(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(2, int(math.ceil((hi - lo) / spacing)) + 1)
    return np.linspace(lo, hi, n)


def _surface_points_local(shape: str, dims: tuple, spacing: float):
    pts = []
    nrm = []
    if shape == BOX:
        hx, hy, hz = (0.5 * d for d in dims)
        for axis, h, (u, hu), (v, hv) in (
            (0, hx, (1, hy), (2, hz)),
            (1, hy, (0, hx), (2, hz)),
            (2, hz, (0, hx), (1, hy)),
        ):
            uu, vv = np.meshgrid(_grid(-hu, hu, spacing), _grid(-hv, hv, spacing))
            face = np.zeros((uu.size, 3))
            face[:, u] = uu.ravel()
            face[:, v] = vv.ravel()
            for sgn in (-1.0, 1.0):
                f = face.copy()
                f[:, axis] = sgn * h
                n = np.zeros((len(f), 3))
                n[:, axis] = sgn
                pts.append(f)
                nrm.append(n)
    elif shape == SPHERE:
        r = dims[0]
        count = max(32, int(4 * math.pi * r * r / (spacing * spacing)))
        i = np.arange(count) + 0.5
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i  # Fibonacci sphere
        z = 1.0 - 2.0 * i / count
        s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        n = np.column_stack([np.cos(phi) * s, np.sin(phi) * s, z])
        pts.append(r * n)
        nrm.append(n)
    else:  # cylinder
        r, h = dims
        hz = 0.5 * h
        n_th = max(8, int(math.ceil(2 * math.pi * r / spacing)))
        th = np.linspace(0, 2 * math.pi, n_th, endpoint=False)
        zs = _grid(-hz, hz, spacing)
        tt, zz = np.meshgrid(th, zs)
        side_n = np.column_stack(
            [np.cos(tt.ravel()), np.sin(tt.ravel()), np.zeros(tt.size)]
        )
        side = side_n * r
        side[:, 2] = zz.ravel()
        pts.append(side)
        nrm.append(side_n)
        radii = _grid(0.0, r, spacing)[1:]
        for sgn in (-1.0, 1.0):
            cap_pts = [np.array([[0.0, 0.0, sgn * hz]])]
            for rr in radii:
                m = max(6, int(math.ceil(2 * math.pi * rr / spacing)))
                a = np.linspace(0, 2 * math.pi, m, endpoint=False)
                ring = np.column_stack(
                    [rr * np.cos(a), rr * np.sin(a), np.full(m, sgn * hz)]
                )
                cap_pts.append(ring)
            cap = np.vstack(cap_pts)
            n = np.zeros((len(cap), 3))
            n[:, 2] = sgn
            pts.append(cap)
            nrm.append(n)
    return np.vstack(pts), np.vstack(nrm)


# --- scene ---------------------------------------------------------------------


@dataclass(frozen=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    def contains(self, p: Vec3) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


@dataclass(frozen=True)
class SceneSpec:
    """Primitive objects plus furniture boxes, with optional workspace box.

    Object ids are unique positive integers; furniture ids unique negative
    integers (assigned automatically when built via helpers).
    """

    objects: tuple[SceneObject, ...] = ()
    furniture: tuple[SceneObject, ...] = ()
    workspace_limits: Aabb | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "furniture", tuple(self.furniture))
        ids = [o.id for o in self.objects] + [f.id for f in self.furniture]
        if len(set(ids)) != len(ids):
            raise ValueError("object/furniture ids must be unique")
        if any(o.id <= 0 for o in self.objects):
            raise ValueError("object ids must be positive")
        if any(f.id >= 0 for f in self.furniture):
            raise ValueError("furniture ids must be negative")

    @property
    def bodies(self) -> tuple[SceneObject, ...]:
        return self.objects + self.furniture

    def body(self, label: int) -> SceneObject:
        for b in self.bodies:
            if b.id == label:
                return b
        raise KeyError(label)

    def surface_samples(self, object_spacing=0.003, furniture_spacing=0.006) -> PointCloud:
        """Ground-truth surface cloud with analytic normals and labels."""
        key = (object_spacing, furniture_spacing)
        cache = self.__dict__.setdefault("_sample_cache", {})
        if key not in cache:
            pts, nrm, lab = [], [], []
            for b in self.bodies:
                spacing = object_spacing if b.id > 0 else furniture_spacing
                p, n = surface_points(b, spacing)
                pts.append(p)
                nrm.append(n)
                lab.append(np.full(len(p), b.id))
            if pts:
                cache[key] = PointCloud(
                    np.vstack(pts), np.vstack(nrm), labels=np.concatenate(lab)
                )
            else:
                cache[key] = PointCloud(np.zeros((0, 3)))
        return cache[key]


def scene_to_json(scene: SceneSpec) -> dict:
    def obj(o: SceneObject) -> dict:
        return {
            "id": o.id,
            "shape": o.shape,
            "dimensions": list(o.dimensions),
            "pose": {
                "position": [float(v) for v in o.pose.translation],
                "quaternion": [float(v) for v in o.pose.rotation.quat],
            },
        }

    out = {
        "objects": [obj(o) for o in scene.objects],
        "furniture": [obj(f) for f in scene.furniture],
        "workspace_limits": None,
    }
    if scene.workspace_limits is not None:
        out["workspace_limits"] = {
            "min": [float(v) for v in scene.workspace_limits.lo],
            "max": [float(v) for v in scene.workspace_limits.hi],
        }
    return out


def scene_from_json(data: dict) -> SceneSpec:
    def obj(d: dict) -> SceneObject:
        pose = Pose(
            Rotation(np.array(d["pose"]["quaternion"], dtype=float)),
            np.array(d["pose"]["position"], dtype=float),
        )
        return SceneObject(d["id"], d["shape"], tuple(d["dimensions"]), pose)

    limits = None
    if data.get("workspace_limits"):
        limits = Aabb(data["workspace_limits"]["min"], data["workspace_limits"]["max"])
    return SceneSpec(
        tuple(obj(o) for o in data.get("objects", [])),
        tuple(obj(f) for f in data.get("furniture", [])),
        limits,
    )


def make_table(
    label: int,
    center_xy: tuple[float, float],
    top_height: float,
    size: tuple[float, float] = (1.2, 0.7),
    thickness: float = 0.03,
) -> SceneObject:
    """A tabletop slab; its lip is graspable like a real table edge."""
    cx, cy = center_xy
    return SceneObject(
        label,
        BOX,
        (size[0], size[1], thickness),
        Pose(Rotation.identity(), vec3(cx, cy, top_height - 0.5 * thickness)),
    )


def make_shelf_unit(
    first_label: int,
    center_xy: tuple[float, float],
    board_heights: tuple[float, ...] = (0.60, 0.90),
    size: tuple[float, float] = (0.8, 0.3),
    thickness: float = 0.02,
) -> list[SceneObject]:
    """Shelf boards (top surfaces at the given heights above the ground)."""
    boards = []
    label = first_label
    for h in board_heights:
        boards.append(make_table(label, center_xy, h, size, thickness))
        label -= 1
    return boards


# --- camera and frames ----------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    min_range: float = 0.40
    max_range: float = 3.5

    def __post_init__(self):
        if self.min_range >= self.max_range:
            raise ValueError("min_range must be below max_range")

    def scaled(self, factor: float) -> "CameraModel":
        return CameraModel(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
            self.min_range,
            self.max_range,
        )

    def pixel_rays(self) -> np.ndarray:
        """Per-pixel camera-frame ray directions with unit z, shape (H*W, 3)."""
        u = np.arange(self.width)
        v = np.arange(self.height)
        uu, vv = np.meshgrid(u, v)
        return np.column_stack(
            [
                ((uu.ravel() - self.cx) / self.fx),
                ((vv.ravel() - self.cy) / self.fy),
                np.ones(self.width * self.height),
            ]
        )

    def project(self, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(u, v, z) for camera-frame points; callers filter z <= 0."""
        p = np.asarray(points_cam, dtype=float).reshape(-1, 3)
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * p[:, 0] / z + self.cx
            v = self.fy * p[:, 1] / z + self.cy
        return u, v, z


@dataclass(frozen=True)
class Frame:
    """One rendered sensor frame (rgb uint8 HxWx3, depth float meters)."""

    rgb: np.ndarray
    depth: np.ndarray
    timestamp: float
    camera_pose: Pose
    camera: CameraModel

    def __post_init__(self):
        if self.rgb.shape[:2] != (self.camera.height, self.camera.width):
            raise ValueError("rgb dimensions do not match camera")
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise ValueError("depth dimensions do not match camera")


def write_depth_pgm(path, frame: Frame) -> None:
    """16-bit binary PGM, depth in millimeters (0 = invalid)."""
    mm = np.clip(frame.depth * 1000.0, 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{frame.camera.width} {frame.camera.height}\n65535\n".encode())
        f.write(mm.tobytes())


def write_rgb_ppm(path, frame: Frame) -> None:
    with open(path, "wb") as f:
        f.write(f"P6\n{frame.camera.width} {frame.camera.height}\n255\n".encode())
        f.write(frame.rgb.astype(np.uint8).tobytes())


_BACKGROUND_RGB = np.array([18, 18, 20], dtype=np.uint8)


def label_color(label: int) -> np.ndarray:
    """Deterministic muted palette; saturated tones are reserved for the laser."""
    if label < 0:
        shade = 90 + (abs(label) * 13) % 40
        return np.array([shade, int(shade * 0.85), int(shade * 0.7)], dtype=np.uint8)
    h = ((label * 47) % 360) / 360.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.5, 0.55)
    return np.array([int(255 * r), int(255 * g), int(255 * b)], dtype=np.uint8)


def _render_raw(scene: SceneSpec, cam: CameraModel, pose: Pose):
    """Full-range z-depth and labels per pixel (no min/max clipping)."""
    dirs_cam = cam.pixel_rays()
    dirs_world = pose.rotation.apply(dirs_cam)
    origin = np.broadcast_to(pose.translation, dirs_world.shape)
    depth = np.full(len(dirs_cam), np.inf)
    labels = np.zeros(len(dirs_cam), dtype=int)
    for body in scene.bodies:
        t = ray_cast(body, origin, dirs_world)
        closer = t < depth
        depth[closer] = t[closer]
        labels[closer] = body.id
    shape = (cam.height, cam.width)
    return depth.reshape(shape), labels.reshape(shape), dirs_cam


def render_depth(
    scene: SceneSpec,
    cam: CameraModel,
    pose: Pose,
    timestamp: float = 0.0,
    depth_noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Frame, PointCloud]:
    """Ray-cast a depth + RGB frame and the labeled cloud of valid pixels.

    The cloud is expressed in the camera frame with ``frame`` set to the
    camera pose. Depths nearer than min_range or farther than max_range are
    invalid (0), matching real sensor behavior.
    """
    raw, labels, dirs_cam = _render_raw(scene, cam, pose)
    depth = raw.copy()
    if depth_noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        noise = rng.normal(0.0, depth_noise_sigma, size=depth.shape)
        depth = np.where(np.isfinite(depth), depth + noise, depth)
    valid = np.isfinite(depth) & (depth >= cam.min_range) & (depth <= cam.max_range)
    depth = np.where(valid, depth, 0.0)

    rgb = np.empty((cam.height, cam.width, 3), dtype=np.uint8)
    rgb[:] = _BACKGROUND_RGB
    for body in scene.bodies:
        rgb[labels == body.id] = label_color(body.id)

    flat_valid = valid.ravel()
    pts_cam = dirs_cam[flat_valid] * depth.ravel()[flat_valid, None]
    cloud = PointCloud(
        pts_cam,
        colors=rgb.reshape(-1, 3)[flat_valid] / 255.0,
        labels=labels.ravel()[flat_valid],
        frame=pose,
    )
    frame = Frame(rgb, depth, timestamp, pose, cam)
    return frame, cloud


# --- laser ----------------------------------------------------------------------


@dataclass(frozen=True)
class LaserEmitter:
    """Pulsed laser; the beam travels along the +z axis of ``pose``."""

    pose: Pose
    pulse_rate: float = 5.0
    color: str = "red"
    spot_radius_px_at_1m: float = 6.0

    def __post_init__(self):
        if self.pulse_rate <= 0:
            raise ValueError("pulse_rate must be positive")
        if self.color not in ("red", "green"):
            raise ValueError("color must be red or green")

    @property
    def origin(self) -> Vec3:
        return self.pose.translation

    @property
    def direction(self) -> Vec3:
        return self.pose.rotation.as_matrix()[:, 2]

    def aimed_at(self, target: Vec3) -> "LaserEmitter":
        d = normalized(np.asarray(target, dtype=float) - self.origin)
        up = vec3(0, 0, 1) if abs(d[2]) < 0.99 else vec3(1, 0, 0)
        x = normalized(np.cross(up, d))
        y = np.cross(d, x)
        return replace(self, pose=Pose(Rotation.from_matrix(np.column_stack([x, y, d])), self.origin))


_LASER_RGB = {"red": np.array([255, 45, 45]), "green": np.array([45, 255, 45])}


def laser_hit_oracle(scene: SceneSpec, emitter: LaserEmitter) -> tuple[Vec3, int]:
    """Exact first beam/scene intersection and the hit body's label."""
    o = emitter.origin[None, :]
    d = emitter.direction[None, :]
    best_t, best_label = np.inf, None
    for body in scene.bodies:
        t = ray_cast(body, o, d)[0]
        if t < best_t:
            best_t, best_label = t, body.id
    if best_label is None:
        raise BeamMiss("laser beam does not hit the scene")
    return emitter.origin + best_t * emitter.direction, best_label


@dataclass(frozen=True)
class DistractorSpec:
    """A moving blob composited into every frame to exercise the filters."""

    start_pixel: tuple[float, float]
    velocity: tuple[float, float]  # pixels per frame
    radius_px: float
    color: tuple[int, int, int] = (255, 255, 255)


@dataclass(frozen=True)
class LaserSequence:
    frames: list[Frame]
    spot_pixels: list[tuple[float, float] | None]  # ground truth, None when absent
    hit_point: Vec3 | None
    hit_label: int | None
    beam_missed: bool


def _draw_disk(rgb: np.ndarray, center: tuple[float, float], radius: float, color) -> None:
    h, w = rgb.shape[:2]
    cu, cv = center
    r = max(radius, 0.6)
    u0, u1 = int(math.floor(cu - r)), int(math.ceil(cu + r))
    v0, v1 = int(math.floor(cv - r)), int(math.ceil(cv + r))
    u0, u1 = max(u0, 0), min(u1, w - 1)
    v0, v1 = max(v0, 0), min(v1, h - 1)
    if u0 > u1 or v0 > v1:
        return
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    mask = (uu - cu) ** 2 + (vv - cv) ** 2 <= r * r
    rgb[v0 : v1 + 1, u0 : u1 + 1][mask] = color


def render_laser_sequence(
    scene: SceneSpec,
    emitter: LaserEmitter,
    cam: CameraModel,
    cam_pose: Pose,
    n_frames: int,
    fps: float,
    distractors: list[DistractorSpec] | None = None,
    background: Frame | None = None,
    pulse_phase: float = 0.0,
) -> LaserSequence:
    """Render a pulsed-laser frame sequence from a static camera.

    The laser spot is composited at the beam's first scene hit whenever the
    pulse is ON and the hit is visible from the camera. ``background`` lets
    callers reuse one static render across many sequences. A beam that exits
    the scene still yields a rendered sequence with ``beam_missed`` set.
    """
    if fps <= 2.0 * emitter.pulse_rate:
        raise ValueError("fps must exceed twice the pulse rate")
    if background is None:
        background, _ = render_depth(scene, cam, cam_pose)
    raw_depth, _, _ = _render_raw(scene, cam, cam_pose)

    hit_point = hit_label = None
    spot_uv = None
    spot_cam_z = None
    beam_missed = False
    try:
        hit_point, hit_label = laser_hit_oracle(scene, emitter)
        p_cam = cam_pose.inverse().apply(hit_point)
        if p_cam[2] > 1e-6:
            u, v, z = cam.project(p_cam[None, :])
            u, v, z = float(u[0]), float(v[0]), float(z[0])
            iu, iv = int(round(u)), int(round(v))
            if 0 <= iu < cam.width and 0 <= iv < cam.height:
                # visible only when nothing is nearer along this pixel's ray
                if z <= raw_depth[iv, iu] + 0.01:
                    spot_uv = (u, v)
                    spot_cam_z = z
    except BeamMiss:
        beam_missed = True

    color = _LASER_RGB[emitter.color]
    frames: list[Frame] = []
    gt: list[tuple[float, float] | None] = []
    for i in range(n_frames):
        t = i / fps
        on = ((t * emitter.pulse_rate + pulse_phase) % 1.0) < 0.5
        rgb = background.rgb.copy()
        if distractors:
            for d in distractors:
                cu = d.start_pixel[0] + d.velocity[0] * i
                cv = d.start_pixel[1] + d.velocity[1] * i
                _draw_disk(rgb, (cu, cv), d.radius_px, np.array(d.color, dtype=np.uint8))
        if on and spot_uv is not None:
            radius = emitter.spot_radius_px_at_1m / max(spot_cam_z, 0.05)
            _draw_disk(rgb, spot_uv, radius, color)
            gt.append(spot_uv)
        else:
            gt.append(None)
        frames.append(Frame(rgb, background.depth, t, cam_pose, cam))
    return LaserSequence(frames, gt, hit_point, hit_label, beam_missed)


# --- grasp execution oracle -------------------------------------------------------


@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    grasped_object: int | None
    failure_reason: str | None


def _points_in_box(points_h: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.all((points_h >= lo) & (points_h <= hi), axis=1)


def simulate_grasp_execution(
    scene: SceneSpec,
    hand: HandModel,
    grasp_pose: Pose,
    arm_path: list[Pose] | None = None,
    aperture: float | None = None,
    friction_half_angle: float = math.radians(20.0),
    approach_dist: float = 0.10,
    lift_dist: float = 0.10,
) -> GraspOutcome:
    """Kinematic grasp test against ground-truth geometry.

    Success requires: (a) the hand body swept along the final approach hits
    nothing but the body between the fingers, (b) closing yields contact on
    both fingers with the same body, (c) the contact normals are antipodal
    within the friction half-angle, and (d) a straight 10cm vertical lift is
    collision-free. The body between the fingers may be furniture, which
    reproduces the table-edge failure mode.
    """
    if aperture is None:
        aperture = hand.max_aperture
    samples = scene.surface_samples()
    if len(samples) == 0:
        return GraspOutcome(False, None, "no_contact")

    R = grasp_pose.rotation.as_matrix()
    pts_h = (samples.points - grasp_pose.translation) @ R
    labels = samples.labels

    lo, hi = hand.region_box(aperture)
    in_region = _points_in_box(pts_h, lo, hi)
    if in_region.any():
        region_labels = labels[in_region]
        vals, counts = np.unique(region_labels, return_counts=True)
        target = int(vals[np.argmax(counts)])
    else:
        target = None

    other = labels != target if target is not None else np.ones(len(labels), dtype=bool)

    # (a) swept hand body along the final approach
    for blo, bhi in hand.body_boxes(aperture):
        swept_lo = blo - np.array([approach_dist, 0.0, 0.0])
        if np.any(_points_in_box(pts_h[other], swept_lo, bhi)):
            return GraspOutcome(False, None, "approach_collision")
    if arm_path:
        for pose in arm_path:
            Rp = pose.rotation.as_matrix()
            ph = (samples.points[other] - pose.translation) @ Rp
            for blo, bhi in hand.body_boxes(aperture):
                if np.any(_points_in_box(ph, blo, bhi)):
                    return GraspOutcome(False, None, "approach_collision")

    # (b) both fingers contact the same body
    if target is None:
        return GraspOutcome(False, None, "no_contact")
    ys = pts_h[in_region, 1]
    if np.max(ys) < 0.0 or np.min(ys) > 0.0:
        return GraspOutcome(False, None, "single_finger")
    region_idx = np.nonzero(in_region)[0]
    region_n_y = (samples.normals @ R)[in_region, 1]
    # first contact per finger; among ties (e.g. box corners) the contact
    # normal is the one opposing the finger's motion
    tol = 1e-3
    plus_ties = ys >= np.max(ys) - tol
    minus_ties = ys <= np.min(ys) + tol
    i_plus = int(np.flatnonzero(plus_ties)[np.argmax(region_n_y[plus_ties])])
    i_minus = int(np.flatnonzero(minus_ties)[np.argmin(region_n_y[minus_ties])])
    p_plus, p_minus = region_idx[i_plus], region_idx[i_minus]
    if labels[p_plus] != labels[p_minus]:
        return GraspOutcome(False, None, "single_finger")
    grasped = int(labels[p_plus])

    # (c) antipodal contact normals within friction cone
    n_plus, n_minus = samples.normals[p_plus], samples.normals[p_minus]
    cos_angle = float(np.dot(n_plus, -n_minus))
    if cos_angle < math.cos(friction_half_angle):
        return GraspOutcome(False, None, "not_antipodal")

    # (d) vertical lift: hand body and the grasped body must clear the rest
    others_mask = labels != grasped
    other_pts = samples.points[others_mask]
    steps = np.linspace(0.0, lift_dist, 21)
    up = np.array([0.0, 0.0, 1.0])
    for dz in steps:
        shifted = (other_pts - (grasp_pose.translation + dz * up)) @ R
        for blo, bhi in hand.body_boxes(aperture):
            if np.any(_points_in_box(shifted, blo, bhi)):
                return GraspOutcome(False, None, "lift_collision")
    grasped_pts = samples.points[labels == grasped]
    for body in scene.bodies:
        if body.id == grasped:
            continue
        for dz in steps[1:]:
            if np.any(contains(body, grasped_pts + dz * up)):
                return GraspOutcome(False, None, "lift_collision")
    return GraspOutcome(True, grasped, None)


# --- random scenes -----------------------------------------------------------------


def _object_library() -> list[tuple[str, tuple]]:
    """30 primitive templates spanning graspable widths of roughly 2-7cm."""
    lib: list[tuple[str, tuple]] = []
    for i in range(12):
        r = 0.010 + 0.0021 * i  # 2.0 - 6.6cm diameter
        h = 0.06 + 0.012 * (i % 6)
        lib.append((CYLINDER, (round(r, 4), round(h, 3))))
    for i in range(12):
        w = 0.020 + 0.0045 * i  # 2.0 - 6.9cm graspable width
        d = min(w + 0.015, 0.09)
        h = 0.05 + 0.011 * (i % 7)
        lib.append((BOX, (round(w, 4), round(d, 4), round(h, 3))))
    for i in range(6):
        r = 0.015 + 0.0036 * i  # 3.0 - 6.6cm diameter
        lib.append((SPHERE, (round(r, 4),)))
    return lib


DEFAULT_OBJECT_LIBRARY = _object_library()


def random_scene(
    n_objects: int,
    seed: int = 0,
    library: list[tuple[str, tuple]] | None = None,
    supports: list[SceneObject] | None = None,
    extra_furniture: list[SceneObject] | None = None,
    workspace_limits: Aabb | None = None,
    min_gap: float = 0.05,
    edge_margin: float = 0.06,
    max_tries: int = 200,
) -> SceneSpec:
    """Seeded scene with non-overlapping library objects resting on supports.

    Objects are placed upright with a random yaw, uniformly over the support
    tops, rejecting placements whose footprint circles come within min_gap
    of each other. Raises PlacementFailure when an object cannot be placed.
    """
    if n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    if library is None:
        library = DEFAULT_OBJECT_LIBRARY
    if supports is None:
        supports = [make_table(-1, (0.0, 0.0), 0.74)]
    furniture = list(supports) + list(extra_furniture or [])

    rng = np.random.default_rng(seed)
    placed: list[SceneObject] = []
    for i in range(n_objects):
        shape, dims = library[int(rng.integers(0, len(library)))]
        template = SceneObject(i + 1, shape, dims, Pose.identity())
        fr = template.footprint_radius()
        ok = False
        for _ in range(max_tries):
            support = furniture[int(rng.integers(0, len(supports)))]
            sx, sy, _ = support.dimensions
            cx, cy = support.pose.translation[:2]
            margin = fr + edge_margin
            if 2 * margin >= min(sx, sy):
                continue
            x = rng.uniform(cx - sx / 2 + margin, cx + sx / 2 - margin)
            y = rng.uniform(cy - sy / 2 + margin, cy + sy / 2 - margin)
            clash = False
            for p in placed:
                dist = math.hypot(x - p.pose.translation[0], y - p.pose.translation[1])
                if dist < fr + p.footprint_radius() + min_gap:
                    clash = True
                    break
            if clash:
                continue
            yaw = float(rng.uniform(0, 2 * math.pi)) if shape == BOX else 0.0
            z = support.top_z() + template.half_height
            pose = Pose(Rotation.from_axis_angle(vec3(0, 0, 1), yaw), vec3(x, y, z))
            placed.append(SceneObject(i + 1, shape, dims, pose))
            ok = True
            break
        if not ok:
            raise PlacementFailure(f"could not place object {i + 1}")
    return SceneSpec(tuple(placed), tuple(furniture), workspace_limits)
