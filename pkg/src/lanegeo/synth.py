"""Seeded synthetic scenes: camera pose, lane families on a shared road surface, 2D observations.

Random streams
--------------
Every scene draws from its own ``numpy.random.Generator`` over the
counter-based Philox4x64-10 bit generator (``numpy.random.Philox``) keyed with
``seed * 2**64 + scene_id``.  Streams are therefore independent of how many
scenes are generated, in which order, or on how many workers.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .association import GroundTruthSlot
from .errors import BehindCamera, DegenerateHeight, DegenerateInverse, RetryExhausted
from .geometry import (
    DEFAULT_INTRINSICS,
    HEIGHT_RANGE_M,
    PITCH_RANGE_DEG,
    CameraPose,
    Intrinsics,
    homography_matrix,
    image_to_ground_points,
    space_to_image_xy,
)
from .ipm import RasterImage
from .lane_model import (
    DEFAULT_DEGREE,
    DEFAULT_SLOTS,
    DEFAULT_Y_POSITIONS,
    Frame,
    Lane3D,
    LanePolyline,
    check_y_positions,
    eval_lane,
    sample_lane,
)
from .observations import Observation, ObservedLane

MAX_RESAMPLES = 100
CENTERLINE_MAX_ABS_X = 8.0
# the road surface stays below this fraction of the camera height
ELEVATION_MARGIN = 0.5
UPHILL_SLOPE_RANGE = (0.01, 0.05)


class Elevation(str, enum.Enum):
    FLAT = "flat"
    UPHILL = "uphill"
    DOWNHILL = "downhill"
    RANDOM = "random"


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_lanes_range: tuple = (2, 6)
    height_range: tuple = HEIGHT_RANGE_M
    pitch_range_deg: tuple = PITCH_RANGE_DEG
    elevation: Elevation = Elevation.RANDOM
    lane_spacing_m: float = 3.7
    curvature_scale: float = 1.0
    noise_px: float = 0.0
    y_positions: tuple = DEFAULT_Y_POSITIONS
    lane_y_range: tuple = (3.0, 100.0)
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    degree: int = DEFAULT_DEGREE
    n_slots: int = DEFAULT_SLOTS
    ground_observations: bool = False
    clip_to_image: bool = False
    image_size: tuple = (480, 360)

    def __post_init__(self):
        object.__setattr__(self, "elevation", Elevation(self.elevation))
        object.__setattr__(self, "y_positions", check_y_positions(self.y_positions))
        lo, hi = self.n_lanes_range
        if not 0 <= lo <= hi:
            raise ValueError("n_lanes_range must be ordered and non-negative")
        if hi > self.n_slots:
            raise ValueError(f"at most {self.n_slots} lanes fit the prediction slots")
        for name in ("height_range", "pitch_range_deg", "lane_y_range"):
            a, b = getattr(self, name)
            if a > b:
                raise ValueError(f"{name} must be ordered")
        if self.height_range[0] <= 0:
            raise ValueError("heights must be positive")
        if self.noise_px < 0:
            raise ValueError("noise_px must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_lanes_range": list(self.n_lanes_range),
            "height_range": list(self.height_range),
            "pitch_range_deg": list(self.pitch_range_deg),
            "elevation": self.elevation.value,
            "lane_spacing_m": self.lane_spacing_m,
            "curvature_scale": self.curvature_scale,
            "noise_px": self.noise_px,
            "y_positions": list(self.y_positions),
            "lane_y_range": list(self.lane_y_range),
            "intrinsics": {"fx": self.intrinsics.fx, "fy": self.intrinsics.fy,
                           "cx": self.intrinsics.cx, "cy": self.intrinsics.cy},
            "degree": self.degree,
            "n_slots": self.n_slots,
            "ground_observations": self.ground_observations,
            "clip_to_image": self.clip_to_image,
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        d["intrinsics"] = Intrinsics(**d["intrinsics"])
        for key in ("n_lanes_range", "height_range", "pitch_range_deg", "y_positions", "lane_y_range", "image_size"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Scene:
    scene_id: int
    pose: CameraPose
    lanes: tuple
    observations: Observation
    config: SceneConfig = field(compare=False)

    @property
    def y_positions(self) -> tuple:
        return self.config.y_positions

    @functools.cached_property
    def _gt_slots(self) -> tuple:
        return tuple(GroundTruthSlot(True, sample_lane(ln, self.y_positions)) for ln in self.lanes)

    def ground_truth_slots(self) -> list:
        return list(self._gt_slots)


def scene_rng(seed: int, scene_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + int(scene_id)))


def _centerline(rng, cfg: SceneConfig) -> np.ndarray:
    s = cfg.curvature_scale
    lo, hi = cfg.lane_y_range
    ygrid = np.linspace(lo, hi, 98)
    for _ in range(MAX_RESAMPLES):
        c = np.array([
            rng.uniform(-1.85, 1.85),
            rng.uniform(-0.04, 0.04) * s,
            rng.uniform(-4e-4, 4e-4) * s,
            rng.uniform(-2e-6, 2e-6) * s,
        ])
        if np.abs(np.polynomial.polynomial.polyval(ygrid, c)).max() <= CENTERLINE_MAX_ABS_X:
            return c
    raise RetryExhausted("could not keep the centerline inside the lateral range")


def elevation_profile(kind: Elevation, slope: float) -> np.ndarray:
    """Road elevation coefficients b(Y) = slope * (Y - Y^2 / 200); the road flattens at 100 m."""
    if kind is Elevation.FLAT:
        return np.zeros(4)
    sign = 1.0 if kind is Elevation.UPHILL else -1.0
    return sign * np.array([0.0, slope, -slope / 200.0, 0.0])


def max_uphill_slope(height: float, y_range) -> float:
    lo, hi = y_range
    ys = np.linspace(lo, hi, 200)
    peak = (ys - ys**2 / 200.0).max()
    return ELEVATION_MARGIN * height / peak


def _sample_structure(rng, cfg: SceneConfig):
    h = rng.uniform(*cfg.height_range)
    pitch = math.radians(rng.uniform(*cfg.pitch_range_deg))
    lo, hi = cfg.n_lanes_range
    n = int(rng.integers(lo, hi + 1))
    kind = cfg.elevation
    if kind is Elevation.RANDOM:
        kind = (Elevation.FLAT, Elevation.UPHILL, Elevation.DOWNHILL)[int(rng.integers(0, 3))]
    s_lo, s_hi = UPHILL_SLOPE_RANGE
    if kind is Elevation.UPHILL:
        s_hi = min(s_hi, max_uphill_slope(h, cfg.lane_y_range))
    slope = rng.uniform(s_lo, s_hi)
    center = _centerline(rng, cfg)
    b = elevation_profile(kind, slope)
    t1, t2 = cfg.lane_y_range
    lanes = []
    for i in range(n):
        offset = (i - (n - 1) / 2.0) * cfg.lane_spacing_m
        a = center.copy()
        a[0] += offset
        lanes.append(Lane3D(_resize(a, cfg.degree), _resize(b, cfg.degree), t1, t2))
    return CameraPose(h, pitch), lanes


def _resize(c: np.ndarray, degree: int) -> np.ndarray:
    out = np.zeros(degree + 1)
    n = min(len(c), degree + 1)
    out[:n] = c[:n]
    return out


def _project_lane(lane: Lane3D, pose: CameraPose, k: Intrinsics, ys) -> tuple:
    pts = sample_lane(lane, ys).points
    z = pts[:, 2]
    if np.any(pose.height_m - z < (1 - ELEVATION_MARGIN) * pose.height_m - 1e-12):
        raise DegenerateHeight("road rises too close to the camera height")
    u, v = space_to_image_xy(pts[:, 0], pts[:, 1], z, pose.height_m, pose.pitch_rad, k)
    return pts[:, 1], np.column_stack([u, v])


def _visible(uv: np.ndarray, size) -> np.ndarray:
    w, h = size
    return (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)


def generate_scene(cfg: SceneConfig, scene_id: int = 0) -> Scene:
    rng = scene_rng(cfg.seed, scene_id)
    k = cfg.intrinsics
    for _ in range(MAX_RESAMPLES):
        pose, lanes = _sample_structure(rng, cfg)
        try:
            projected = []
            kept = []
            for lane in lanes:
                ys, uv = _project_lane(lane, pose, k, cfg.y_positions)
                if cfg.clip_to_image:
                    vis = np.flatnonzero(_visible(uv, cfg.image_size))
                    if len(vis) < cfg.degree + 2:
                        raise DegenerateHeight("lane mostly outside the image")
                    lane = replace(lane, t1=ys[vis[0]], t2=ys[vis[-1]])
                    ys, uv = _project_lane(lane, pose, k, cfg.y_positions)
                kept.append(lane)
                projected.append((ys, uv))
            noisy = []
            hm = homography_matrix(pose, k)
            for idx, (ys, uv) in enumerate(projected):
                if cfg.noise_px > 0:
                    uv = uv + rng.normal(0.0, cfg.noise_px, size=uv.shape)
                ground = None
                if cfg.ground_observations:
                    ground = LanePolyline(Frame.GROUND, image_to_ground_points(uv, hm))
                noisy.append(ObservedLane(LanePolyline(Frame.IMAGE, uv), tuple(ys), idx, ground))
        except (DegenerateHeight, BehindCamera, DegenerateInverse, ValueError):
            continue
        return Scene(scene_id, pose, tuple(kept), Observation(tuple(noisy), k), cfg)
    raise RetryExhausted(f"scene {scene_id}: degenerate projections after {MAX_RESAMPLES} resamples")


def generate_dataset(cfg: SceneConfig, n_scenes: int) -> list:
    return [generate_scene(cfg, i) for i in range(n_scenes)]


def with_ground_observations(scene: Scene) -> Scene:
    """Attach flat-ground observations by back-projecting the image points with the true pose."""
    hm = homography_matrix(scene.pose, scene.observations.intrinsics)
    lanes = []
    for ob in scene.observations.image_polylines:
        g = LanePolyline(Frame.GROUND, image_to_ground_points(ob.image.points, hm))
        lanes.append(replace(ob, ground=g))
    return replace(scene, observations=Observation(tuple(lanes), scene.observations.intrinsics))


# ---------------------------------------------------------------------------
# rendering


def _segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0) if L2 > 0 else 0.0
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_scene(scene: Scene, width: int = 480, height: int = 360, line_width_px: float = 2.0,
                 step_m: float = 0.5) -> RasterImage:
    """Grayscale rendering of the lanes as anti-aliased polylines (marking 1, background 0)."""
    img = np.zeros((height, width))
    k = scene.observations.intrinsics
    half = line_width_px / 2.0
    reach = half + 1.0
    for lane in scene.lanes:
        ys = np.arange(lane.t1, lane.t2 + 1e-9, step_m)
        x, z = eval_lane(lane, ys)
        u, v = space_to_image_xy(x, ys, z, scene.pose.height_m, scene.pose.pitch_rad, k)
        for i in range(len(ys) - 1):
            ax, ay, bx, by = u[i], v[i], u[i + 1], v[i + 1]
            c0 = max(int(math.floor(min(ax, bx) - reach)), 0)
            c1 = min(int(math.ceil(max(ax, bx) + reach)), width - 1)
            r0 = max(int(math.floor(min(ay, by) - reach)), 0)
            r1 = min(int(math.ceil(max(ay, by) + reach)), height - 1)
            if c0 > c1 or r0 > r1:
                continue
            cc, rr = np.meshgrid(np.arange(c0, c1 + 1) + 0.5, np.arange(r0, r1 + 1) + 0.5)
            d = _segment_distance(cc, rr, ax, ay, bx, by)
            cover = np.clip(half + 0.5 - d, 0.0, 1.0)
            patch = img[r0:r1 + 1, c0:c1 + 1]
            np.maximum(patch, cover, out=patch)
    return RasterImage(width, height, 1, img[:, :, None])
