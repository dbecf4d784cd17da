"""Camera-pose and 3D lane geometry: projections, association, geometry losses,
pose recovery, inverse perspective mapping, synthetic scenes and evaluation."""

from .errors import LaneGeoError
from .geometry import CameraPose, Intrinsics, DEFAULT_INTRINSICS
from .lane_model import Lane3D, LanePolyline, Frame, DEFAULT_Y_POSITIONS

__version__ = "0.1.0"
