"""Camera frames, the 3D -> flat-ground transform and the ground <-> image homography.

Frame convention: the origin sits at the foot of the camera on the Z = 0
plane, Y points forward along the road, X laterally, Z up.  The camera
center is at (0, 0, h).

The homography is the literal product of the intrinsic matrix and the
extrinsic matrix ``[[1, 0, 0], [0, cos(phi + pi/2), h], [0, sin(phi + pi/2), 0]]``.
Expanded, a ground point (Xg, Yg) maps to::

    u~ = fx * Xg + cx * cos(phi) * Yg
    v~ = fy * (h - sin(phi) * Yg) + cy * cos(phi) * Yg
    z~ = cos(phi) * Yg

The array kernels (:func:`project_to_ground`, :func:`ground_to_image_xy`)
accept plain arrays or :class:`~lanegeo.dual.Dual` numbers so the same code
path is differentiated by the losses and the solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import dual
from .errors import BehindCamera, DegenerateHeight, DegenerateInverse

EPS_Z = 1e-6

# working ranges of the benchmark camera rig
HEIGHT_RANGE_M = (1.4, 1.8)
PITCH_RANGE_DEG = (0.0, 10.0)


@dataclass(frozen=True)
class CameraPose:
    height_m: float
    pitch_rad: float

    def __post_init__(self):
        if not self.height_m > 0:
            raise ValueError(f"camera height must be positive, got {self.height_m}")
        # estimates may dip slightly below zero pitch; only |phi| < pi/2 is structural
        if not abs(self.pitch_rad) < math.pi / 2:
            raise ValueError(f"pitch must lie in (-pi/2, pi/2), got {self.pitch_rad}")

    @property
    def pitch_deg(self) -> float:
        return math.degrees(self.pitch_rad)

    @classmethod
    def from_degrees(cls, height_m: float, pitch_deg: float) -> "CameraPose":
        return cls(height_m, math.radians(pitch_deg))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


# 480x360 input with the principal point at the image center
DEFAULT_INTRINSICS = Intrinsics(fx=1000.0, fy=1000.0, cx=240.0, cy=180.0)


class Point3D(NamedTuple):
    x: float
    y: float
    z: float


class PointGround(NamedTuple):
    x: float
    y: float


class PointImage(NamedTuple):
    u: float
    v: float


# ---------------------------------------------------------------------------
# array kernels


def project_to_ground(x, y, z, h):
    """Scale 3D points through the camera center onto Z = 0.

    Works element-wise on arrays or Duals; raises :class:`DegenerateHeight`
    if any ``|h - z| <= EPS_Z``.
    """
    d = h - z
    if np.any(np.abs(dual.value(d)) <= EPS_Z):
        raise DegenerateHeight("camera height equals point elevation")
    s = h / d
    return s * x, s * y


def ground_to_image_xy(xg, yg, h, phi, k: Intrinsics):
    """Map flat-ground points to pixels with the pose-dependent homography."""
    c = dual.cos(phi + math.pi / 2)
    s = dual.sin(phi + math.pi / 2)
    zt = s * yg
    if np.any(dual.value(zt) <= EPS_Z):
        raise BehindCamera("ground point maps behind the camera")
    ut = k.fx * xg + k.cx * zt
    vt = k.fy * (c * yg + h) + k.cy * zt
    return ut / zt, vt / zt


def space_to_image_xy(x, y, z, h, phi, k: Intrinsics):
    xg, yg = project_to_ground(x, y, z, h)
    return ground_to_image_xy(xg, yg, h, phi, k)


# ---------------------------------------------------------------------------
# typed single-point API


def ground_projection(p: Point3D, h: float) -> PointGround:
    xg, yg = project_to_ground(p.x, p.y, p.z, h)
    return PointGround(float(xg), float(yg))


def homography_matrix(pose: CameraPose, k: Intrinsics) -> np.ndarray:
    h, phi = pose.height_m, pose.pitch_rad
    extrinsic = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(phi + math.pi / 2), h],
            [0.0, math.sin(phi + math.pi / 2), 0.0],
        ]
    )
    return k.matrix() @ extrinsic


def check_homography(hm: np.ndarray) -> None:
    hm = np.asarray(hm, dtype=float)
    if hm.shape != (3, 3):
        raise ValueError("homography must be 3x3")
    scale = np.abs(hm).max()
    det = np.linalg.det(hm / scale) if scale > 0 else 0.0
    if not abs(det) > 1e-12:
        raise ValueError(f"homography is singular (normalized det {det:.3g})")


def ground_to_image_points(pts: np.ndarray, hm: np.ndarray) -> np.ndarray:
    """Vectorised ground -> image for an (n, 2) array."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    q = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(hm).T
    if np.any(q[:, 2] <= EPS_Z):
        raise BehindCamera("ground point maps behind the camera")
    return q[:, :2] / q[:, 2:3]


def image_to_ground_points(pts: np.ndarray, hm: np.ndarray) -> np.ndarray:
    """Vectorised image -> ground for an (n, 2) array."""
    check_homography(hm)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    q = np.column_stack([pts, np.ones(len(pts))]) @ np.linalg.inv(hm).T
    if np.any(q[:, 2] <= EPS_Z):
        raise DegenerateInverse("image point at or above the horizon")
    return q[:, :2] / q[:, 2:3]


def ground_to_image(pg: PointGround, hm: np.ndarray) -> PointImage:
    u, v = ground_to_image_points([[pg.x, pg.y]], hm)[0]
    return PointImage(float(u), float(v))


def image_to_ground(pi: PointImage, hm: np.ndarray) -> PointGround:
    x, y = image_to_ground_points([[pi.u, pi.v]], hm)[0]
    return PointGround(float(x), float(y))


def horizon_row(pose: CameraPose, k: Intrinsics) -> float:
    """Limit of v as the ground distance goes to infinity."""
    return k.cy - k.fy * math.tan(pose.pitch_rad)
