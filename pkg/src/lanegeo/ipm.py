"""Inverse perspective mapping: warp a perspective image onto a metric top-view grid.

Pixel (col, row) of a raster covers image coordinates [col, col+1) x [row, row+1),
so its center is at (u, v) = (col + 0.5, row + 0.5).  Top-view row 0 is the
farthest ground row.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import EPS_Z, CameraPose, Intrinsics, project_to_ground
from .lane_model import DEFAULT_Y_POSITIONS, Lane3D, sample_lane


@dataclass(frozen=True, eq=False)
class RasterImage:
    width: int
    height: int
    channels: int
    data: np.ndarray  # (height, width, channels), values in [0, 1]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if data.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"data shape {data.shape} does not match {self.height}x{self.width}x{self.channels}"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "RasterImage":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls(arr.shape[1], arr.shape[0], arr.shape[2], arr)

    def __eq__(self, other):
        return (isinstance(other, RasterImage) and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class TopViewGrid:
    x_min: float = -10.0
    x_max: float = 10.0
    y_min: float = 1.0
    y_max: float = 101.0
    cols: int = 208
    rows: int = 108

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid extents must be ordered")
        if self.cols < 2 or self.rows < 2:
            raise ValueError("grid needs at least 2 columns and 2 rows")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.cols

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.rows


def grid_ground_coords(grid: TopViewGrid) -> np.ndarray:
    """Cell-center ground coordinates, shape (rows * cols, 2), row-major."""
    xs = grid.x_min + (np.arange(grid.cols) + 0.5) * grid.dx
    ys = grid.y_max - (np.arange(grid.rows) + 0.5) * grid.dy
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def ground_to_grid(xg, yg, grid: TopViewGrid):
    """Fractional (col, row) of ground points; cell centers land on integers."""
    col = (np.asarray(xg) - grid.x_min) / grid.dx - 0.5
    row = (grid.y_max - np.asarray(yg)) / grid.dy - 0.5
    return col, row


@dataclass(frozen=True, eq=False)
class SamplingMap:
    """Image index coordinates sampled by every top-view cell."""

    grid: TopViewGrid
    x: np.ndarray  # (rows, cols) continuous column index into the source image
    y: np.ndarray
    valid: np.ndarray  # ray hits the ground in front of the camera


def sampling_map(pose: CameraPose, k: Intrinsics, grid: TopViewGrid) -> SamplingMap:
    g = grid_ground_coords(grid)
    xg, yg = g[:, 0], g[:, 1]
    h, phi = pose.height_m, pose.pitch_rad
    zt = np.cos(phi) * yg
    valid = zt > EPS_Z
    safe = np.where(valid, zt, 1.0)
    u = (k.fx * xg + k.cx * zt) / safe
    v = (k.fy * (h - np.sin(phi) * yg) + k.cy * zt) / safe
    shape = (grid.rows, grid.cols)
    return SamplingMap(grid, (u - 0.5).reshape(shape), (v - 0.5).reshape(shape), valid.reshape(shape))


def warp_with_map(img: RasterImage, smap: SamplingMap) -> RasterImage:
    """Bilinear sampling; samples outside the image or on degenerate rays are 0."""
    w, h = img.width, img.height
    x, y = smap.x, smap.y
    inside = smap.valid & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    d = img.data
    out = ((1 - fy) * ((1 - fx) * d[y0, x0] + fx * d[y0, x1])
           + fy * ((1 - fx) * d[y1, x0] + fx * d[y1, x1]))
    out = np.where(inside[..., None], out, 0.0)
    return RasterImage(smap.grid.cols, smap.grid.rows, img.channels, out)


def warp_to_topview(img: RasterImage, pose: CameraPose, k: Intrinsics,
                    grid: TopViewGrid = TopViewGrid()) -> RasterImage:
    return warp_with_map(img, sampling_map(pose, k, grid))


def lane_pixels_topview(lane: Lane3D, pose: CameraPose, grid: TopViewGrid = TopViewGrid(),
                        ys=DEFAULT_Y_POSITIONS) -> np.ndarray:
    """(col, row) grid coordinates of the lane's flat-ground projection, shape (K, 2)."""
    pts = sample_lane(lane, ys).points
    xg, yg = project_to_ground(pts[:, 0], pts[:, 1], pts[:, 2], pose.height_m)
    col, row = ground_to_grid(xg, yg, grid)
    return np.column_stack([col, row])


def lane_tracks(top: RasterImage, threshold: float = 0.25, link_cells: float = 3.0):
    """Link per-row intensity runs into vertical tracks.

    Returns a list of tracks, each a list of (row, centroid column) pairs.
    """
    img = top.data.mean(axis=2)
    tracks = []
    for r in range(img.shape[0]):
        row = img[r]
        on = row > threshold
        if not on.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate([[0], on.astype(int), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            cols = np.arange(start, stop)
            wts = row[start:stop]
            c = float((cols * wts).sum() / wts.sum())
            best = None
            for t in tracks:
                last_r, last_c = t[-1]
                if last_r < r and abs(last_c - c) <= link_cells and (best is None or abs(last_c - c) < abs(best[-1][1] - c)):
                    best = t
            if best is None:
                tracks.append([(r, c)])
            else:
                best.append((r, c))
    return tracks


def straight_lane_variance(top: RasterImage, min_rows: int = 3, **kw) -> list:
    """Variance of the centroid column along each track (cells^2)."""
    return [float(np.var([c for _, c in t])) for t in lane_tracks(top, **kw) if len(t) >= min_rows]


# ---------------------------------------------------------------------------
# image files


def write_png(img: RasterImage, path) -> None:
    from PIL import Image

    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if img.channels == 1 else "RGB"
    Image.fromarray(arr[:, :, 0] if img.channels == 1 else arr, mode=mode).save(path)


def read_png(path) -> RasterImage:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("L") if im.mode in ("L", "LA", "I", "I;16", "1", "P") else im.convert("RGB")
        arr = np.asarray(im, dtype=float) / 255.0
    return RasterImage.from_array(arr)


def write_raw(img: RasterImage, path) -> None:
    """ASCII header line ``width height channels`` followed by little-endian float32."""
    with open(path, "wb") as f:
        f.write(f"{img.width} {img.height} {img.channels}\n".encode("ascii"))
        f.write(img.data.astype("<f4").tobytes())


def read_raw(path) -> RasterImage:
    blob = Path(path).read_bytes()
    header, _, body = blob.partition(b"\n")
    w, h, c = (int(t) for t in header.decode("ascii").split())
    data = np.frombuffer(body, dtype="<f4")
    if data.size != w * h * c:
        raise ValueError(f"raw image holds {data.size} floats, header promises {w * h * c}")
    return RasterImage(w, h, c, data.reshape(h, w, c).astype(float))
