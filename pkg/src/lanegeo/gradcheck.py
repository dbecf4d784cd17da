"""Finite-difference check of the composite-loss gradient.

Each trial draws a synthetic scene and perturbs its truth parameters so that
no absolute-value argument sits on its kink.  Central differences use a step
of ``rel_step * max(|x_i|, s_i)`` where ``s_i`` is ``100**-r`` for a
coefficient of power r and 1 otherwise, so coordinates near zero still get a
step that is large against rounding.  A coordinate is skipped when the
analytic pass flagged it as touching a kink, when the sign pattern of the
absolute-value arguments differs between ``x + h`` and ``x - h``, or when the
Hungarian association changes across the stencil.

Per-coordinate error: ``|g - fd| / max(|g|, |fd|, floor)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .association import LossWeights, PredictionSlot, cost_matrix, hungarian_assign, pad_ground_truth, pair_cost
from .lane_model import Y_SCALE
from .losses import AbsTracker, ParamVector, default_confidences, loss_and_gradient, loss_from_params
from .synth import SceneConfig, generate_scene, scene_rng


@dataclass(frozen=True)
class GradcheckConfig:
    seed: int = 0
    trials: int = 100
    rel_step: float = 1e-6
    tol: float = 1e-5
    floor: float = 1e-6
    include_cam: bool = False
    weights: LossWeights = LossWeights()
    inject_bug: bool = False  # negative control: corrupt one analytic coordinate

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not (self.rel_step > 0 and self.tol > 0 and self.floor > 0):
            raise ValueError("rel_step, tol and floor must be positive")


@dataclass
class TrialResult:
    scene_seed: int
    scene_id: int
    max_error: float
    worst_index: int
    worst_name: str
    checked: int
    skipped: int


@dataclass
class GradcheckReport:
    trials: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((t.max_error for t in self.trials), default=0.0)

    @property
    def worst(self) -> Optional[TrialResult]:
        return max(self.trials, key=lambda t: t.max_error, default=None)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def perturbed_params(scene, rng: np.random.Generator) -> ParamVector:
    """Truth parameters with Gaussian jitter on pose, coefficients and bounds."""
    cfg = scene.config
    lanes = list(scene.lanes) + [None] * (cfg.n_slots - len(scene.lanes))
    p = ParamVector.from_model(scene.pose, lanes, cfg.degree)
    v = p.values.copy()
    v[0] += rng.normal(0.0, 0.05)
    v[1] += rng.normal(0.0, 0.01)
    r = np.arange(p.degree + 1)
    for s in range(p.n_slots):
        if not p.active[s]:
            continue
        v[p.a_slice(s)] += rng.normal(0.0, 0.05, p.degree + 1) * Y_SCALE ** -r
        v[p.b_slice(s)] += rng.normal(0.0, 0.02, p.degree + 1) * Y_SCALE ** -r
        i1, i2 = p.t_index(s)
        v[i1] += rng.normal(0.0, 0.3)
        v[i2] += rng.normal(0.0, 0.3)
    return p.with_values(v)


def coordinate_scale(p: ParamVector, i: int) -> float:
    """Natural unit of coordinate i: ``100**-r`` for a power-r coefficient, else 1."""
    if i < 2:
        return 1.0
    off = (i - 2) % p.block
    r = off % (p.degree + 1) if off < 2 * (p.degree + 1) else 0
    return Y_SCALE ** -r


def _step(p: ParamVector, i: int, rel: float) -> float:
    return rel * max(abs(p.values[i]), coordinate_scale(p, i))


def check_point(scene, params: ParamVector, cfg: GradcheckConfig):
    """Return (errors, skipped mask) for one parameter point."""
    w = cfg.weights
    res = loss_and_gradient(scene, params, w, include_cam=cfg.include_cam)
    g = res.gradient.copy()
    if cfg.inject_bug:
        g[1] *= 1.01
    n = len(g)
    errs = np.zeros(n)
    skipped = res.flagged.copy()
    conf = default_confidences(params)
    gts = pad_ground_truth(scene.ground_truth_slots(), params.n_slots)
    base_cost = cost_matrix(gts, [PredictionSlot(c, params.lane(s)) for s, c in enumerate(conf)], w)

    def mapping_at(q: ParamVector, i: int) -> tuple:
        # pose coordinates do not enter the matching cost; a lane coordinate only its own column
        if i < 2:
            return res.assignment.mapping
        s = (i - 2) // q.block
        c = base_cost.copy()
        pred = PredictionSlot(conf[s], q.lane(s))
        c[:, s] = [pair_cost(gt, pred, w) for gt in gts]
        return hungarian_assign(c).mapping
    for i in range(n):
        if skipped[i]:
            continue
        h = _step(params, i, cfg.rel_step)
        vals = []
        signs = []
        for sgn in (1.0, -1.0):
            v = params.values.copy()
            v[i] += sgn * h
            q = params.with_values(v)
            if mapping_at(q, i) != res.assignment.mapping:
                break
            tr = AbsTracker()
            vals.append(loss_from_params(scene, q, w, include_cam=cfg.include_cam,
                                         assignment=res.assignment, tracker=tr))
            signs.append(tr.signs())
        if len(vals) < 2 or not np.array_equal(signs[0], signs[1]):
            skipped[i] = True
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        errs[i] = abs(g[i] - fd) / max(abs(g[i]), abs(fd), cfg.floor)
    return errs, skipped


def run_trial(cfg: GradcheckConfig, trial: int) -> TrialResult:
    scene_cfg = SceneConfig(seed=cfg.seed)
    scene = generate_scene(scene_cfg, trial)
    params = perturbed_params(scene, scene_rng(cfg.seed + 1, trial))
    errs, skipped = check_point(scene, params, cfg)
    worst = int(np.argmax(errs))
    return TrialResult(cfg.seed, trial, float(errs[worst]), worst, params.describe(worst),
                       int((~skipped).sum()), int(skipped.sum()))


def gradcheck(cfg: GradcheckConfig, map_fn=map) -> GradcheckReport:
    """``map_fn`` lets callers fan trials out over a pool; results keep trial order."""
    return GradcheckReport(list(map_fn(lambda t: run_trial(cfg, t), range(cfg.trials))))
