"""Two-polynomial 3D lane model: X(Y) and Z(Y), each of degree R, over [t1, t2]."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .dual import horner
from .errors import InsufficientSupport, RankDeficient

DEFAULT_Y_POSITIONS = (3.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 65.0, 80.0, 100.0)
DEFAULT_DEGREE = 3
DEFAULT_SLOTS = 7

# fitting works on Y / Y_SCALE to keep the Vandermonde matrix well conditioned
Y_SCALE = 100.0
COND_LIMIT = 1e12


class Frame(enum.Enum):
    SPACE3D = "space3d"
    GROUND = "ground"
    IMAGE = "image"


@dataclass(frozen=True)
class Lane3D:
    a: tuple
    b: tuple
    t1: float
    t2: float

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(c) for c in self.a))
        object.__setattr__(self, "b", tuple(float(c) for c in self.b))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "t2", float(self.t2))
        if len(self.a) != len(self.b) or not self.a:
            raise ValueError("a and b must have the same non-zero length")
        if not self.t1 < self.t2:
            raise ValueError(f"t1 must be below t2 (got {self.t1}, {self.t2})")
        if self.t1 < 0:
            raise ValueError("t1 must be non-negative")

    @property
    def degree(self) -> int:
        return len(self.a) - 1


@dataclass(frozen=True)
class LanePolyline:
    frame: Frame
    points: np.ndarray = field(compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        dim = 3 if self.frame is Frame.SPACE3D else 2
        if pts.ndim != 2 or pts.shape[1] != dim:
            raise ValueError(f"{self.frame.value} polyline needs (K, {dim}) points")
        if len(pts) < 2:
            raise ValueError("polyline needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline points must be finite")
        if self.frame is not Frame.IMAGE and np.any(np.diff(pts[:, 1]) <= 0):
            raise ValueError("Y must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]


def check_y_positions(ys) -> tuple:
    ys = tuple(float(y) for y in ys)
    if any(y <= 0 for y in ys) or any(b <= a for a, b in zip(ys, ys[1:])):
        raise ValueError("Y positions must be positive and strictly increasing")
    return ys


def eval_lane(lane: Lane3D, y):
    """(x, z) of the lane at ``y``; scalar in, floats out."""
    x = horner(lane.a, y)
    z = horner(lane.b, y)
    if np.ndim(x) == 0:
        return float(x), float(z)
    return x, z


def sample_lane(lane: Lane3D, ys=DEFAULT_Y_POSITIONS) -> LanePolyline:
    ys = np.asarray(ys, dtype=float)
    inside = ys[(ys >= lane.t1) & (ys <= lane.t2)]
    if len(inside) < 2:
        raise InsufficientSupport(
            f"only {len(inside)} sample position(s) inside [{lane.t1}, {lane.t2}]"
        )
    x, z = eval_lane(lane, inside)
    return LanePolyline(Frame.SPACE3D, np.column_stack([x, inside, z]))


def _polyfit(y: np.ndarray, values: np.ndarray, degree: int) -> np.ndarray:
    """QR least squares on the normalised Vandermonde; returns unnormalised coefficients."""
    v = np.vander(y / Y_SCALE, degree + 1, increasing=True)
    if np.linalg.cond(v) > COND_LIMIT:
        raise RankDeficient("Vandermonde system is numerically singular")
    q, r = np.linalg.qr(v)
    c = solve_triangular(r, q.T @ values)
    scale = Y_SCALE ** np.arange(degree + 1)
    return c / (scale[:, None] if c.ndim == 2 else scale)


def fit_lane(points: LanePolyline, degree: int = DEFAULT_DEGREE) -> Lane3D:
    if points.frame is not Frame.SPACE3D:
        raise ValueError("fit_lane needs a 3D polyline")
    pts = points.points
    if len(pts) < degree + 1:
        raise RankDeficient(f"{len(pts)} points cannot determine a degree-{degree} fit")
    y = pts[:, 1]
    coeffs = _polyfit(y, pts[:, [0, 2]], degree)
    return Lane3D(coeffs[:, 0], coeffs[:, 1], y.min(), y.max())
