"""Pulsed laser-spot detection in frame sequences, 3D lifting, and the
green/red workspace test.

The detector mirrors a classic pipeline: frame differencing OR'd with a
brightness threshold, connected components, size and color filters, then
temporal association with a pulse-consistency check. The pulse phase is
inferred from each track because emitter and camera clocks are not
synchronized.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .geom import Pose, Vec3
from .sim import CameraModel, Frame


class NoDetection(Exception):
    """No track satisfied the size/color/pulse filters."""


class AmbiguousDetection(Exception):
    """Two or more qualifying tracks tie in confidence."""


class NoDepth(Exception):
    """No valid depth near the requested pixel."""


@dataclass(frozen=True)
class DetectorParams:
    diff_threshold: int = 60
    brightness_threshold: int = 240
    min_area: int = 2
    max_area: int = 100
    red_hue_ranges: tuple = ((345.0, 360.0), (0.0, 15.0))
    green_hue_range: tuple = (90.0, 150.0)
    min_saturation: float = 0.25
    persistence_window: int = 10  # n
    min_hits: int = 3  # m
    pixel_gate: float = 4.0  # temporal matching gate (px)
    gamma: float = 1.0  # exposure normalization exponent

    def __post_init__(self):
        if self.min_hits > self.persistence_window:
            raise ValueError("min_hits must not exceed persistence_window")
        if self.min_area > self.max_area:
            raise ValueError("min_area must not exceed max_area")


@dataclass(frozen=True)
class SpotCandidate:
    pixel: tuple[float, float]
    area: int
    peak_brightness: int
    mean_hue: float
    saturation: float
    frame_index: int


@dataclass(frozen=True)
class LaserDetection:
    pixel: tuple[float, float]
    point: Vec3
    color_class: str  # "red" | "green"
    confidence: float
    supporting_frames: tuple[int, ...]


def _hue_in(hue: float, ranges) -> bool:
    return any(lo <= hue <= hi for lo, hi in ranges)


def _classify_hue(hue: float, params: DetectorParams) -> str | None:
    if _hue_in(hue, params.red_hue_ranges):
        return "red"
    lo, hi = params.green_hue_range
    if lo <= hue <= hi:
        return "green"
    return None


def _normalize(rgb: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return rgb
    scaled = 255.0 * np.power(rgb.astype(np.float32) / 255.0, gamma)
    return scaled.astype(np.uint8)


def _frame_candidates(frames: list[Frame], params: DetectorParams) -> list[SpotCandidate]:
    """Per-frame bright/changed components passing size and color filters."""
    out: list[SpotCandidate] = []
    prev = _normalize(frames[0].rgb, params.gamma)
    for i in range(1, len(frames)):
        cur = _normalize(frames[i].rgb, params.gamma)
        diff = cv2.absdiff(cur, prev).max(axis=2)
        bright = cur.max(axis=2)
        mask = ((diff >= params.diff_threshold) | (bright >= params.brightness_threshold)).astype(
            np.uint8
        )
        n, labels, stats, centroids = cv2.connectedComponentsWithStats(mask, connectivity=8)
        for c in range(1, n):
            area = int(stats[c, cv2.CC_STAT_AREA])
            if not (params.min_area <= area <= params.max_area):
                continue
            component = labels == c
            mean_rgb = cur[component].mean(axis=0) / 255.0
            h, s, v = colorsys.rgb_to_hsv(*mean_rgb)
            hue = h * 360.0
            if s < params.min_saturation or _classify_hue(hue, params) is None:
                continue
            out.append(
                SpotCandidate(
                    (float(centroids[c, 0]), float(centroids[c, 1])),
                    area,
                    int(cur[component].max()),
                    hue,
                    float(s),
                    i,
                )
            )
        prev = cur
    return out


@dataclass
class _Track:
    candidates: list[SpotCandidate] = field(default_factory=list)

    @property
    def frames(self) -> set[int]:
        return {c.frame_index for c in self.candidates}

    def last_pixel(self) -> tuple[float, float]:
        return self.candidates[-1].pixel


def _associate(candidates: list[SpotCandidate], gate: float) -> list[_Track]:
    tracks: list[_Track] = []
    for cand in candidates:  # already in frame order
        best = None
        best_d = gate
        for tr in tracks:
            if tr.candidates[-1].frame_index == cand.frame_index:
                continue
            d = math.dist(tr.last_pixel(), cand.pixel)
            if d <= best_d:
                best, best_d = tr, d
        if best is None:
            tracks.append(_Track([cand]))
        else:
            best.candidates.append(cand)
    return tracks


def _best_phase(
    present: set[int], times: np.ndarray, frame_ids: np.ndarray, pulse_rate: float
) -> tuple[float, set[int], set[int]]:
    """Phase offset maximizing on/off alignment; returns (score, ON, OFF) sets."""
    best = (-1.0, set(), set())
    for k in range(24):
        phase = k / 24.0
        on_mask = ((times * pulse_rate + phase) % 1.0) < 0.5
        on = set(frame_ids[on_mask].tolist())
        off = set(frame_ids[~on_mask].tolist())
        score = len(present & on) + len(off - present)
        if score > best[0]:
            best = (score, on, off)
    return best


def detect_spot(
    frames: list[Frame],
    params: DetectorParams,
    pulse_rate: float,
    fps: float,
) -> LaserDetection:
    """Find the pulsed laser spot and lift it to a 3D world point.

    The pipeline is: per-pair frame difference OR brightness threshold ->
    connected components -> size filter -> hue filter -> temporal
    association -> pulse-consistency check. A track qualifies when it is
    present in at least min_hits expected ON frames and absent in at least
    min_hits expected OFF frames under its best-aligned pulse phase. The
    highest-confidence track wins; its centroid in its last ON frame is
    lifted through that frame's depth image.

    Raises:
        NoDetection: no qualifying track.
        AmbiguousDetection: top two tracks within 0.05 confidence.
        NoDepth: winning pixel has no valid depth in a 3px neighborhood.
    """
    if len(frames) < params.persistence_window:
        raise ValueError("need at least persistence_window frames")
    if fps <= 2.0 * pulse_rate:
        raise ValueError("fps must exceed twice the pulse rate")

    candidates = _frame_candidates(frames, params)
    if not candidates:
        raise NoDetection("no spot candidates after filtering")
    tracks = _associate(candidates, params.pixel_gate)

    frame_ids = np.arange(1, len(frames))
    times = np.array([frames[i].timestamp for i in frame_ids])

    qualifying: list[tuple[float, _Track, set[int]]] = []
    for tr in tracks:
        present = tr.frames
        _, on, off = _best_phase(present, times, frame_ids, pulse_rate)
        hits_on = len(present & on)
        absent_off = len(off - present)
        if hits_on >= params.min_hits and absent_off >= params.min_hits and on:
            confidence = hits_on / len(on)
            qualifying.append((confidence, tr, on))

    if not qualifying:
        raise NoDetection("no track consistent with the pulse pattern")
    qualifying.sort(key=lambda q: -q[0])
    if len(qualifying) >= 2 and qualifying[0][0] - qualifying[1][0] <= 0.05:
        raise AmbiguousDetection("two tracks tie in confidence")

    confidence, track, on = qualifying[0]
    on_candidates = [c for c in track.candidates if c.frame_index in on]
    last = on_candidates[-1]
    reds = sum(1 for c in on_candidates if _classify_hue(c.mean_hue, params) == "red")
    color = "red" if reds * 2 >= len(on_candidates) else "green"
    frame = frames[last.frame_index]
    point = lift_to_3d(last.pixel, frame, frame.camera)
    return LaserDetection(
        last.pixel,
        point,
        color,
        float(confidence),
        tuple(sorted(track.frames)),
    )


def lift_to_3d(pixel: tuple[float, float], frame: Frame, cam: CameraModel) -> Vec3:
    """Back-project a pixel through the depth image into the world frame.

    Searches a 3px neighborhood for valid depth when the exact pixel has
    none. Raises NoDepth when the whole neighborhood is invalid.
    """
    u0 = int(round(pixel[0]))
    v0 = int(round(pixel[1]))
    best = None
    best_d2 = math.inf
    for dv in range(-3, 4):
        for du in range(-3, 4):
            u, v = u0 + du, v0 + dv
            if not (0 <= u < cam.width and 0 <= v < cam.height):
                continue
            z = frame.depth[v, u]
            if z <= 0.0:
                continue
            d2 = du * du + dv * dv
            if d2 < best_d2:
                best_d2 = d2
                best = (u, v, float(z))
    if best is None:
        raise NoDepth(f"no valid depth within 3px of {pixel}")
    _, _, z = best
    # keep the sub-pixel location; only the depth comes from the grid
    p_cam = np.array(
        [(pixel[0] - cam.cx) / cam.fx * z, (pixel[1] - cam.cy) / cam.fy * z, z]
    )
    return frame.camera_pose.apply(p_cam)


def classify_workspace(point: Vec3, laser_origin: Vec3, envelope: float = 2.0) -> str:
    """'green' when the point is within the workspace envelope (inclusive)."""
    d = float(np.linalg.norm(np.asarray(point, dtype=float) - np.asarray(laser_origin, dtype=float)))
    return "green" if d <= envelope else "red"
