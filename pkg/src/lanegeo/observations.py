"""Observed 2D lane data consumed by the solver."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Intrinsics
from .lane_model import Frame, LanePolyline


@dataclass(frozen=True)
class ObservedLane:
    """One image-plane polyline with the ground-truth Y of every point.

    ``lane_index`` links the polyline to its source lane (known-association
    mode); it is ``None`` when the association must be inferred.  ``ground``
    optionally carries flat-ground observations of the same points.
    """

    image: LanePolyline
    y_positions: tuple
    lane_index: Optional[int] = None
    ground: Optional[LanePolyline] = None

    def __post_init__(self):
        object.__setattr__(self, "y_positions", tuple(float(y) for y in self.y_positions))
        if self.image.frame is not Frame.IMAGE:
            raise ValueError("observed polyline must be in the image frame")
        if len(self.y_positions) != len(self.image):
            raise ValueError("one Y position per observed point is required")
        if self.ground is not None and (self.ground.frame is not Frame.GROUND or len(self.ground) != len(self.image)):
            raise ValueError("ground observation must be a matching ground-frame polyline")

    @property
    def ys(self) -> np.ndarray:
        return np.asarray(self.y_positions)

    def __len__(self):
        return len(self.image)


@dataclass(frozen=True)
class Observation:
    image_polylines: tuple
    intrinsics: Intrinsics

    def __post_init__(self):
        object.__setattr__(self, "image_polylines", tuple(self.image_polylines))

    @property
    def has_ground(self) -> bool:
        return bool(self.image_polylines) and all(p.ground is not None for p in self.image_polylines)

    @property
    def known_association(self) -> bool:
        return all(p.lane_index is not None for p in self.image_polylines)
