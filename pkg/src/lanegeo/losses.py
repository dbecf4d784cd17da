"""Stage-1 geometry losses: pose regression, 3D fit, flat-ground and image-plane constraints.

All polyline residuals reduce by the mean absolute error over the K points
and the two free coordinates of the frame (X/Z in 3D, since predictions are
evaluated at the ground-truth Y; X/Y on the flat ground; u/v in the image).
The same association is shared by the 3D, ground and image terms.

``L_top`` in some ablation tables is the flat-ground term here (``l_grd``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import dual
from .association import (
    Assignment,
    GroundTruthSlot,
    LossWeights,
    PredictionSlot,
    associate,
    pad_ground_truth,
)
from .dual import Dual, horner
from .errors import NonDifferentiablePoint
from .geometry import CameraPose, Intrinsics, ground_to_image_xy, project_to_ground
from .lane_model import Lane3D

PROB_CLAMP = 1e-7
KINK_TOL = 1e-10


@dataclass(frozen=True)
class LossBreakdown:
    l_cam: float
    l_3d: float
    l_grd: float
    l_img: float
    total: float = field(default=math.nan)

    def __post_init__(self):
        if math.isnan(self.total):
            object.__setattr__(self, "total", self.l_cam + self.l_3d + self.l_grd + self.l_img)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("l_cam", "l_3d", "l_grd", "l_img", "total")}


# ---------------------------------------------------------------------------
# parameter layout


class ParamVector:
    """Flat optimisation vector: (h, phi) then one block per prediction slot.

    Block layout for slot s (R = degree): ``a_0..a_R, b_0..b_R, t1, t2``.
    """

    def __init__(self, values, n_slots: int, degree: int, active=None):
        self.values = np.array(values, dtype=float)
        self.n_slots = int(n_slots)
        self.degree = int(degree)
        self.active = tuple(bool(x) for x in (active if active is not None else [True] * n_slots))
        if len(self.values) != self.size(n_slots, degree):
            raise ValueError(f"expected {self.size(n_slots, degree)} values, got {len(self.values)}")
        if len(self.active) != n_slots:
            raise ValueError("active mask must have one entry per slot")

    @staticmethod
    def size(n_slots: int, degree: int) -> int:
        return 2 + n_slots * (2 * degree + 4)

    @property
    def block(self) -> int:
        return 2 * self.degree + 4

    def base(self, slot: int) -> int:
        return 2 + slot * self.block

    def a_slice(self, slot: int) -> slice:
        b = self.base(slot)
        return slice(b, b + self.degree + 1)

    def b_slice(self, slot: int) -> slice:
        b = self.base(slot) + self.degree + 1
        return slice(b, b + self.degree + 1)

    def t_index(self, slot: int) -> tuple:
        b = self.base(slot) + 2 * self.degree + 2
        return b, b + 1

    def describe(self, i: int) -> str:
        if i == 0:
            return "height"
        if i == 1:
            return "pitch"
        slot, off = divmod(i - 2, self.block)
        r = self.degree + 1
        if off < r:
            name = f"a_{off}"
        elif off < 2 * r:
            name = f"b_{off - r}"
        else:
            name = ("t1", "t2")[off - 2 * r]
        return f"slot {slot} {name}"

    @classmethod
    def from_model(cls, pose: CameraPose, lanes: Sequence[Optional[Lane3D]], degree: Optional[int] = None):
        if degree is None:
            degree = next((ln.degree for ln in lanes if ln is not None), 3)
        vals = [pose.height_m, pose.pitch_rad]
        active = []
        for ln in lanes:
            if ln is None:
                vals += [0.0] * (2 * degree + 2) + [1.0, 2.0]
                active.append(False)
            else:
                if ln.degree != degree:
                    raise ValueError("all lanes must share one degree")
                vals += list(ln.a) + list(ln.b) + [ln.t1, ln.t2]
                active.append(True)
        return cls(vals, len(lanes), degree, active)

    def pose(self) -> CameraPose:
        return CameraPose(float(self.values[0]), float(self.values[1]))

    def lane(self, slot: int) -> Lane3D:
        t1, t2 = self.t_index(slot)
        return Lane3D(self.values[self.a_slice(slot)], self.values[self.b_slice(slot)],
                      self.values[t1], self.values[t2])

    def to_model(self):
        lanes = [self.lane(s) if self.active[s] else None for s in range(self.n_slots)]
        return self.pose(), lanes

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.n_slots, self.degree, self.active)


# ---------------------------------------------------------------------------
# core, generic over floats and Duals


def kink_abs(x):
    """|x| whose subgradient is 0 wherever |x| < KINK_TOL (rounding noise counts as the kink)."""
    if isinstance(x, Dual):
        sign = np.where(np.abs(x.val) < KINK_TOL, 0.0, np.sign(x.val))
        return Dual(np.abs(x.val), x.der * sign[..., None])
    return np.abs(x)


class AbsTracker:
    """Absolute value that records its arguments and flags near-kink coordinates."""

    def __init__(self):
        self.values = []
        self.flagged = None

    def __call__(self, x):
        v = dual.value(x)
        self.values.append(np.ravel(v).copy())
        if isinstance(x, Dual):
            near = np.abs(v) < KINK_TOL
            if np.any(near):
                hit = np.any(x.der[near] != 0, axis=0)
                self.flagged = hit if self.flagged is None else (self.flagged | hit)
        return kink_abs(x)

    def signs(self) -> np.ndarray:
        return np.sign(np.concatenate(self.values)) if self.values else np.zeros(0)


def _mae(absf, *diffs):
    total = 0.0
    n = 0
    for d in diffs:
        total = total + absf(d).sum()
        n += dual.value(d).size
    return total / n


def _class_prob(conf: float, is_lane: bool) -> float:
    p = conf if is_lane else 1.0 - conf
    return min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)


def _terms(gt_slots, lanes, confidences, mapping, w, *, pose=None, gt_pose=None, k=None,
           want=("3d", "grd", "img"), absf: Callable = kink_abs):
    """Sum the requested matched terms; ``lanes[j]`` is (a, b, t1, t2) for prediction j."""
    l3d = lgrd = limg = 0.0
    for m, gt in enumerate(gt_slots):
        j = mapping[m]
        if "3d" in want:
            l3d = l3d - w.alpha1 * math.log(_class_prob(confidences[j], gt.is_lane))
        if not gt.is_lane:
            continue
        pts = gt.polyline.points
        gx, ys, gz = pts[:, 0], pts[:, 1], pts[:, 2]
        a, b, t1, t2 = lanes[j]
        x = horner(a, ys)
        z = horner(b, ys)
        if "3d" in want:
            bounds = absf(ys[0] - t1) + absf(ys[-1] - t2)
            l3d = l3d + w.alpha3 * bounds + w.alpha2 * _mae(absf, x - gx, z - gz)
        if "grd" in want or "img" in want:
            h, phi = pose
            gh, gphi = gt_pose
            gxg, gyg = project_to_ground(gx, ys, gz, gh)
            xg, yg = project_to_ground(x, ys, z, h)
            if "grd" in want:
                lgrd = lgrd + w.alpha2 * _mae(absf, xg - gxg, yg - gyg)
            if "img" in want:
                gu, gv = ground_to_image_xy(gxg, gyg, gh, gphi, k)
                u, v = ground_to_image_xy(xg, yg, h, phi, k)
                limg = limg + w.alpha2 * _mae(absf, u - gu, v - gv)
    return l3d, lgrd, limg


def _lanes_of(preds: Sequence[PredictionSlot]):
    return [(p.lane.a, p.lane.b, p.lane.t1, p.lane.t2) for p in preds]


def _padded(gts, preds):
    return pad_ground_truth(gts, len(preds))


# ---------------------------------------------------------------------------
# public loss terms


def loss_cam(pred: CameraPose, gt: CameraPose, weights=(1.0, 1.0)) -> float:
    """|dh| + |dphi|, meters plus radians; ``weights`` scales the two terms (unweighted by default)."""
    wh, wp = weights
    return wh * abs(pred.height_m - gt.height_m) + wp * abs(pred.pitch_rad - gt.pitch_rad)


def loss_3d(gts, preds, w: LossWeights, assignment: Assignment) -> float:
    gts = _padded(gts, preds)
    conf = [p.confidence for p in preds]
    l3d, _, _ = _terms(gts, _lanes_of(preds), conf, assignment.mapping, w, want=("3d",))
    return float(l3d)


def loss_ground(gts, preds, pose_pred: CameraPose, pose_gt: CameraPose, w: LossWeights,
                assignment: Assignment) -> float:
    gts = _padded(gts, preds)
    conf = [p.confidence for p in preds]
    _, lgrd, _ = _terms(gts, _lanes_of(preds), conf, assignment.mapping, w,
                        pose=(pose_pred.height_m, pose_pred.pitch_rad),
                        gt_pose=(pose_gt.height_m, pose_gt.pitch_rad), want=("grd",))
    return float(lgrd)


def loss_image(gts, preds, pose_pred: CameraPose, pose_gt: CameraPose, k: Intrinsics,
               w: LossWeights, assignment: Assignment) -> float:
    gts = _padded(gts, preds)
    conf = [p.confidence for p in preds]
    _, _, limg = _terms(gts, _lanes_of(preds), conf, assignment.mapping, w,
                        pose=(pose_pred.height_m, pose_pred.pitch_rad),
                        gt_pose=(pose_gt.height_m, pose_gt.pitch_rad), k=k, want=("img",))
    return float(limg)


def loss_total_stage1(scene, preds: Sequence[PredictionSlot], pose_pred: CameraPose,
                      w: LossWeights = LossWeights(), include_cam: bool = True) -> LossBreakdown:
    """All four terms under one association computed from the 3D matching cost."""
    gts = _padded(scene.ground_truth_slots(), preds)
    assignment = associate(gts, preds, w)
    conf = [p.confidence for p in preds]
    gt_pose = scene.pose
    l3d, lgrd, limg = _terms(gts, _lanes_of(preds), conf, assignment.mapping, w,
                             pose=(pose_pred.height_m, pose_pred.pitch_rad),
                             gt_pose=(gt_pose.height_m, gt_pose.pitch_rad),
                             k=scene.observations.intrinsics)
    lcam = loss_cam(pose_pred, gt_pose) if include_cam else 0.0
    return LossBreakdown(lcam, float(l3d), float(lgrd), float(limg))


# ---------------------------------------------------------------------------
# parameter-vector losses and gradients


def default_confidences(params: ParamVector) -> list:
    return [1.0 if a else 0.0 for a in params.active]


def _prediction_slots(params: ParamVector, confidences) -> list:
    out = []
    for s in range(params.n_slots):
        out.append(PredictionSlot(confidences[s], params.lane(s)))
    return out


def _param_loss(scene, values, params: ParamVector, confidences, w, mapping, include_cam, absf):
    lanes = []
    for s in range(params.n_slots):
        t1, t2 = params.t_index(s)
        lanes.append((values[params.a_slice(s)], values[params.b_slice(s)], values[t1], values[t2]))
    gts = _padded(scene.ground_truth_slots(), lanes)
    gt_pose = scene.pose
    h, phi = values[0], values[1]
    l3d, lgrd, limg = _terms(gts, lanes, confidences, mapping, w, pose=(h, phi),
                             gt_pose=(gt_pose.height_m, gt_pose.pitch_rad),
                             k=scene.observations.intrinsics, absf=absf)
    total = l3d + lgrd + limg
    if include_cam:
        total = total + absf(h - gt_pose.height_m) + absf(phi - gt_pose.pitch_rad)
    return total


def param_assignment(scene, params: ParamVector, w: LossWeights, confidences=None) -> Assignment:
    confidences = default_confidences(params) if confidences is None else confidences
    return associate(scene.ground_truth_slots(), _prediction_slots(params, confidences), w)


def loss_from_params(scene, params: ParamVector, w: LossWeights = LossWeights(), confidences=None,
                     include_cam: bool = True, assignment: Optional[Assignment] = None,
                     tracker: Optional[AbsTracker] = None) -> float:
    """Composite loss at a parameter point; the association is recomputed unless given."""
    confidences = default_confidences(params) if confidences is None else confidences
    if assignment is None:
        assignment = param_assignment(scene, params, w, confidences)
    absf = tracker if tracker is not None else kink_abs
    return float(_param_loss(scene, params.values, params, confidences, w,
                             assignment.mapping, include_cam, absf))


@dataclass
class GradientResult:
    value: float
    gradient: np.ndarray
    flagged: np.ndarray  # coordinates touching an |r| < KINK_TOL residual
    assignment: Assignment


def loss_and_gradient(scene, params: ParamVector, w: LossWeights = LossWeights(), confidences=None,
                      include_cam: bool = True) -> GradientResult:
    """Forward-mode gradient of the composite loss with the association held fixed."""
    confidences = default_confidences(params) if confidences is None else confidences
    assignment = param_assignment(scene, params, w, confidences)
    tracker = AbsTracker()
    x = Dual.variables(params.values)
    out = _param_loss(scene, x, params, confidences, w, assignment.mapping, include_cam, tracker)
    if isinstance(out, Dual):
        val, grad = float(out.val), np.array(out.der, dtype=float)
    else:  # nothing depended on the parameters
        val, grad = float(out), np.zeros(len(params.values))
    flagged = tracker.flagged if tracker.flagged is not None else np.zeros(len(grad), bool)
    return GradientResult(val, grad, flagged, assignment)


def loss_gradient(scene, params: ParamVector, w: LossWeights = LossWeights(), confidences=None,
                  include_cam: bool = True) -> np.ndarray:
    res = loss_and_gradient(scene, params, w, confidences, include_cam)
    if res.flagged.any():
        names = ", ".join(params.describe(i) for i in np.flatnonzero(res.flagged)[:5])
        warnings.warn(f"subgradient used at kink for: {names}", NonDifferentiablePoint, stacklevel=2)
    return res.gradient
