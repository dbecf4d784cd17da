"""Joint recovery of camera pose and 3D lane polynomials from 2D observations.

This is a direct optimisation of the image-plane (and optionally flat-ground)
geometry constraints.  It is a verification instrument for the geometry, not
a reproduction of a learned pose regressor.

Identifiability: from image residuals alone the problem has a two-dimensional
gauge (height trades against a common Z offset, pitch against a rescaling of
the coefficients), so pose recovery needs the flat-ground residuals
(``use_ground_loss``) or another source of metric information.

Solver: Levenberg-damped Gauss-Newton on the stacked residual vector with
Marquardt diagonal scaling, Jacobians by forward-mode dual numbers.  Lane
coefficients are optimised in normalised form (``a_r * 100**r``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import dual
from .association import LossWeights, hungarian_assign
from .dual import Dual
from .errors import (
    BehindCamera,
    DegenerateHeight,
    DegenerateInit,
    DegenerateInverse,
    DivergedSolve,
    NonUniqueAssociation,
    RankDeficient,
)
from .geometry import CameraPose, Intrinsics, ground_to_image_xy, homography_matrix, image_to_ground_points, project_to_ground
from .lane_model import DEFAULT_DEGREE, DEFAULT_SLOTS, Y_SCALE, Lane3D, _polyfit
from .losses import LossBreakdown, ParamVector
from .observations import Observation, ObservedLane

_DEGENERATE = (DegenerateHeight, BehindCamera, DegenerateInverse)
UNMATCHABLE_COST = 1e12


@dataclass(frozen=True)
class SolverConfig:
    gtol: float = 1e-10
    xtol: float = 1e-12
    max_iters: int = 200
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    max_damping: float = 1e20
    degree: int = DEFAULT_DEGREE
    n_slots: int = DEFAULT_SLOTS
    weights: LossWeights = LossWeights()
    use_ground_loss: bool = False
    height_bounds: tuple = (1.0, 2.5)
    pitch_bounds_deg: tuple = (-2.0, 15.0)
    init_height: float = 1.6
    init_pitch_deg: float = 5.0
    max_association_rounds: int = 10

    def __post_init__(self):
        if self.gtol < 0 or self.xtol < 0 or self.max_iters < 0:
            raise ValueError("tolerances and max_iters must be non-negative")

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["weights"] = [self.weights.alpha1, self.weights.alpha2, self.weights.alpha3]
        d["height_bounds"] = list(self.height_bounds)
        d["pitch_bounds_deg"] = list(self.pitch_bounds_deg)
        return d


@dataclass
class SolveReport:
    pose: CameraPose
    lanes: list
    iterations: int
    final_loss: LossBreakdown
    converged: bool
    history: list  # (iteration, least-squares objective) of accepted iterates
    lane_sources: list = field(default_factory=list)  # observation index behind each lane
    association_rounds: int = 0
    warnings: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# problem assembly


def _check_observation(obs: Observation, cfg: SolverConfig) -> None:
    for i, ob in enumerate(obs.image_polylines):
        if len(ob) < cfg.degree + 2:
            raise ValueError(
                f"observation {i} has {len(ob)} points; degree {cfg.degree} needs at least {cfg.degree + 2}"
            )
    if len(obs.image_polylines) > cfg.n_slots:
        raise ValueError(f"{len(obs.image_polylines)} observed lanes exceed {cfg.n_slots} slots")


HORIZON_MARGIN_PX = 10.0


def _init_pose(cfg: SolverConfig, obs: Optional[Observation] = None) -> CameraPose:
    """Mid-range pose, pitched down further if observations reach above its horizon."""
    pitch = math.radians(cfg.init_pitch_deg)
    if obs is not None and obs.image_polylines:
        k = obs.intrinsics
        v_min = min(float(ob.image.points[:, 1].min()) for ob in obs.image_polylines)
        needed = math.atan((k.cy - v_min + HORIZON_MARGIN_PX) / k.fy)
        pitch = max(pitch, needed)
    return CameraPose(cfg.init_height, pitch)


def _flat_bootstrap(ob: ObservedLane, pose: CameraPose, k: Intrinsics, degree: int) -> Lane3D:
    try:
        g = image_to_ground_points(ob.image.points, homography_matrix(pose, k))
    except DegenerateInverse as exc:
        raise DegenerateInit(str(exc)) from exc
    xg, yg = g[:, 0], g[:, 1]
    try:
        a = _polyfit(yg, xg, degree)
    except (RankDeficient, np.linalg.LinAlgError) as exc:
        raise DegenerateInit(str(exc)) from exc
    t1, t2 = float(yg.min()), float(yg.max())
    if t1 < 0 or not t1 < t2:
        raise DegenerateInit("back-projected Y extent is not usable")
    return Lane3D(a, np.zeros(degree + 1), t1, t2)


def _ray_bootstrap(ob: ObservedLane, pose: CameraPose, k: Intrinsics, degree: int) -> Lane3D:
    """Intersect each pixel ray with the plane Y = known Y under the given pose."""
    uv = ob.image.points
    ys = ob.ys
    c, s = math.cos(pose.pitch_rad), math.sin(pose.pitch_rad)
    x = (uv[:, 0] - k.cx) * ys * c / k.fx
    z = pose.height_m - ys * (c * (uv[:, 1] - k.cy) / k.fy + s)
    a = _polyfit(ys, x, degree)
    b = _polyfit(ys, z, degree)
    return Lane3D(a, b, ys.min(), ys.max())


def init_params(obs: Observation, cfg: SolverConfig = SolverConfig(), method: str = "flat") -> ParamVector:
    """Initial parameters: mid-range pose and per-lane bootstraps in observation order.

    ``method="flat"`` back-projects the observations onto the ground under the
    initial pose and fits X over Y with Z = 0; ``method="ray"`` intersects the
    pixel rays with the known Y positions instead (never degenerate).
    """
    pose = _init_pose(cfg, obs)
    boot = {"flat": _flat_bootstrap, "ray": _ray_bootstrap}[method]
    lanes = [boot(ob, pose, obs.intrinsics, cfg.degree) for ob in obs.image_polylines]
    lanes += [None] * (cfg.n_slots - len(lanes))
    return ParamVector.from_model(pose, lanes, cfg.degree)


class _Problem:
    """Residuals for a fixed pairing of observed lanes to parameter blocks."""

    def __init__(self, observed: list, k: Intrinsics, cfg: SolverConfig):
        self.observed = observed
        self.k = k
        self.cfg = cfg
        self.r = cfg.degree + 1
        self.scale = Y_SCALE ** np.arange(self.r)
        self.use_ground = cfg.use_ground_loss

    @property
    def n_params(self) -> int:
        return 2 + 2 * self.r * len(self.observed)

    def pack(self, pose: CameraPose, lanes: list) -> np.ndarray:
        vals = [pose.height_m, pose.pitch_rad]
        for ln in lanes:
            vals += list(np.asarray(ln.a) * self.scale) + list(np.asarray(ln.b) * self.scale)
        return np.array(vals)

    def coeffs(self, theta, j: int):
        base = 2 + 2 * self.r * j
        return theta[base:base + self.r], theta[base + self.r:base + 2 * self.r]

    def unpack(self, theta: np.ndarray) -> tuple:
        pose = CameraPose(float(theta[0]), float(theta[1]))
        lanes = []
        for j, ob in enumerate(self.observed):
            a, b = self.coeffs(theta, j)
            lanes.append(Lane3D(np.asarray(a) / self.scale, np.asarray(b) / self.scale,
                                ob.ys.min(), ob.ys.max()))
        return pose, lanes

    def project(self, theta, j: int):
        ob = self.observed[j]
        a, b = self.coeffs(theta, j)
        yn = ob.ys / Y_SCALE
        x = dual.horner(a, yn)
        z = dual.horner(b, yn)
        xg, yg = project_to_ground(x, ob.ys, z, theta[0])
        u, v = ground_to_image_xy(xg, yg, theta[0], theta[1], self.k)
        return xg, yg, u, v

    def residuals(self, theta):
        parts = []
        a2 = self.cfg.weights.alpha2
        for j, ob in enumerate(self.observed):
            xg, yg, u, v = self.project(theta, j)
            wgt = math.sqrt(a2 / (2 * len(ob)))
            pts = ob.image.points
            parts += [(u - pts[:, 0]) * wgt, (v - pts[:, 1]) * wgt]
            if self.use_ground:
                gp = ob.ground.points
                parts += [(xg - gp[:, 0]) * wgt, (yg - gp[:, 1]) * wgt]
        return dual.concatenate(parts) if parts else np.zeros(0)

    def jacobian(self, theta: np.ndarray):
        out = self.residuals(Dual.variables(theta))
        if isinstance(out, Dual):
            return out.val, out.der
        return np.asarray(out), np.zeros((len(out), len(theta)))

    def breakdown(self, theta: np.ndarray) -> LossBreakdown:
        a2 = self.cfg.weights.alpha2
        lgrd = limg = 0.0
        for j, ob in enumerate(self.observed):
            xg, yg, u, v = self.project(theta, j)
            pts = ob.image.points
            limg += a2 * np.mean(np.abs(np.concatenate([u - pts[:, 0], v - pts[:, 1]])))
            if ob.ground is not None:
                gp = ob.ground.points
                lgrd += a2 * np.mean(np.abs(np.concatenate([xg - gp[:, 0], yg - gp[:, 1]])))
        return LossBreakdown(0.0, 0.0, float(lgrd), float(limg))

    def project_box(self, theta: np.ndarray) -> np.ndarray:
        out = theta.copy()
        out[0] = np.clip(out[0], *self.cfg.height_bounds)
        lo, hi = (math.radians(d) for d in self.cfg.pitch_bounds_deg)
        out[1] = np.clip(out[1], lo, hi)
        return out


def _levenberg_marquardt(problem: _Problem, theta0: np.ndarray, cfg: SolverConfig):
    theta = problem.project_box(theta0)
    try:
        r, J = problem.jacobian(theta)
    except _DEGENERATE as exc:
        raise DegenerateInit(str(exc)) from exc
    f = 0.5 * float(r @ r)
    if not math.isfinite(f):
        raise DivergedSolve("initial objective is not finite")
    lam = cfg.damping_init
    history = [(0, f)]
    converged = False
    it = 0
    while it < cfg.max_iters:
        g = J.T @ r
        if np.linalg.norm(g) < cfg.gtol:
            converged = True
            break
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12)
        accepted = False
        while lam <= cfg.max_damping:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.damping_up
                continue
            cand = problem.project_box(theta + step)
            if np.linalg.norm(cand - theta) < cfg.xtol:
                converged = True
                break
            try:
                r_new = problem.residuals(cand)
            except _DEGENERATE:
                lam *= cfg.damping_up
                continue
            f_new = 0.5 * float(r_new @ r_new)
            if math.isfinite(f_new) and f_new < f:
                theta, f = cand, f_new
                lam = max(lam * cfg.damping_down, 1e-15)
                accepted = True
                break
            lam *= cfg.damping_up
        if not accepted:
            break
        it += 1
        history.append((it, f))
        r, J = problem.jacobian(theta)
        if not np.all(np.isfinite(J)):
            raise DivergedSolve("Jacobian became non-finite")
    return theta, it, converged, history


# ---------------------------------------------------------------------------
# public entry points


def _bootstrap_lanes(observed: list, pose: CameraPose, k: Intrinsics, cfg: SolverConfig, notes: list) -> list:
    lanes = []
    for ob in observed:
        try:
            lanes.append(_flat_bootstrap(ob, pose, k, cfg.degree))
        except DegenerateInit:
            notes.append("flat bootstrap hit the horizon; used known-Y ray bootstrap")
            lanes.append(_ray_bootstrap(ob, pose, k, cfg.degree))
    return lanes


def _require_ground(obs: Observation, cfg: SolverConfig) -> None:
    if cfg.use_ground_loss and not obs.has_ground:
        raise ValueError("use_ground_loss requires ground observations on every polyline")


def solve(obs: Observation, config: SolverConfig = SolverConfig()) -> SolveReport:
    """Known-association solve: observed polyline i drives parameter block i."""
    _check_observation(obs, config)
    _require_ground(obs, config)
    observed = list(obs.image_polylines)
    notes = []
    problem = _Problem(observed, obs.intrinsics, config)
    pose0 = _init_pose(config, obs)
    lanes0 = _bootstrap_lanes(observed, pose0, obs.intrinsics, config, notes)
    theta0 = problem.pack(pose0, lanes0)
    theta, iters, converged, history = _levenberg_marquardt(problem, theta0, config)
    pose, lanes = problem.unpack(theta)
    sources = [ob.lane_index if ob.lane_index is not None else i for i, ob in enumerate(observed)]
    return SolveReport(pose, lanes, iters, problem.breakdown(theta), converged, history,
                       sources, 0, sorted(set(notes)))


def _dummy_lane(degree: int) -> Lane3D:
    return Lane3D(np.zeros(degree + 1), np.zeros(degree + 1), 3.0, 100.0)


def _association_cost(observed: list, slot_lanes: list, pose: CameraPose, k: Intrinsics,
                      w: LossWeights, m: int, degree: int) -> np.ndarray:
    """Matching cost in the image plane: rows are observations padded with non-lanes."""
    c = np.empty((m, m))
    conf = [1.0 if ln is not None else 0.0 for ln in slot_lanes]
    for i in range(m):
        for j in range(m):
            if i >= len(observed):
                c[i, j] = -w.alpha1 * (1.0 - conf[j])
                continue
            ob = observed[i]
            lane = slot_lanes[j] if slot_lanes[j] is not None else _dummy_lane(degree)
            try:
                x = dual.horner(lane.a, ob.ys)
                z = dual.horner(lane.b, ob.ys)
                u, v = ground_to_image_xy(*project_to_ground(x, ob.ys, z, pose.height_m),
                                          pose.height_m, pose.pitch_rad, k)
            except _DEGENERATE:
                c[i, j] = UNMATCHABLE_COST
                continue
            pts = ob.image.points
            fit = np.mean(np.abs(np.concatenate([u - pts[:, 0], v - pts[:, 1]])))
            bounds = abs(ob.ys[0] - lane.t1) + abs(ob.ys[-1] - lane.t2)
            c[i, j] = -w.alpha1 * conf[j] + w.alpha2 * fit + w.alpha3 * bounds
    return c


def _unique_for_real_rows(c: np.ndarray, mapping, n_real: int) -> bool:
    tol = 1e-9 * max(1.0, float(np.abs(c).max()))
    m = len(mapping)
    for i in range(n_real):
        for k in range(i + 1, m):
            swapped = c[i, mapping[k]] + c[k, mapping[i]]
            if abs(swapped - (c[i, mapping[i]] + c[k, mapping[k]])) <= tol:
                return False
    return True


def _canonical_order(observed: list) -> list:
    """Observation order that does not depend on how the input was shuffled."""
    keys = [(float(ob.image.points[:, 0].mean()), float(ob.image.points[:, 1].mean()),
             tuple(ob.image.points.ravel()), ob.y_positions) for ob in observed]
    return sorted(range(len(observed)), key=lambda i: keys[i])


def solve_with_association(obs: Observation, config: SolverConfig = SolverConfig()) -> SolveReport:
    """Unknown-association solve alternating Hungarian matching and continuous refinement."""
    _check_observation(obs, config)
    _require_ground(obs, config)
    k = obs.intrinsics
    m = config.n_slots
    observed = list(obs.image_polylines)
    order = _canonical_order(observed)
    notes = []
    pose = _init_pose(config, obs)
    boot = _bootstrap_lanes([observed[i] for i in order], pose, k, config, notes)
    slot_lanes = boot + [None] * (m - len(boot))
    mapping = None
    rounds = 0
    total_iters = 0
    history = []
    converged = False
    unique = True
    theta = None
    problem = None
    slot_of_obs = []
    while rounds < config.max_association_rounds:
        c = _association_cost(observed, slot_lanes, pose, k, config.weights, m, config.degree)
        assignment = hungarian_assign(c)
        new_mapping = assignment.mapping[:len(observed)]
        unique = _unique_for_real_rows(c, assignment.mapping, len(observed))
        if mapping is not None and new_mapping == mapping and converged:
            break
        mapping = new_mapping
        # slots taken by real observations, in observation order
        slot_of_obs = list(mapping)
        pairs = [(i, j) for i, j in enumerate(slot_of_obs)]
        problem = _Problem([observed[i] for i, _ in pairs], k, config)
        init_lanes = [slot_lanes[j] if slot_lanes[j] is not None else _ray_bootstrap(observed[i], pose, k, config.degree)
                      for i, j in pairs]
        theta0 = problem.pack(pose, init_lanes)
        theta, iters, converged, hist = _levenberg_marquardt(problem, theta0, config)
        offset = total_iters
        history += [(offset + it, f) for it, f in hist]
        total_iters += iters
        rounds += 1
        pose, solved = problem.unpack(theta)
        slot_lanes = [None] * m
        for (i, j), ln in zip(pairs, solved):
            slot_lanes[j] = ln
    if problem is None:  # no rounds were allowed
        raise ValueError("max_association_rounds must be positive")
    if not unique:
        notes.append("NonUniqueAssociation: tied optimal lane associations")
        warnings.warn("optimal lane association is not unique", NonUniqueAssociation, stacklevel=2)
    _, lanes = problem.unpack(theta)
    return SolveReport(pose, lanes, total_iters, problem.breakdown(theta), converged, history,
                       list(range(len(observed))), rounds, sorted(set(notes)))
