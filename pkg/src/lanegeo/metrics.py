"""Point-wise 3D lane evaluation: matching, precision/recall/F and AP.

A prediction and a ground-truth lane are compared at the evaluation Y
positions the ground-truth lane covers (those inside its ``[t1, t2]``).  At
each such Y the distance is Euclidean in the (X, Z) plane; a Y where the
prediction is undefined counts as a miss.  A pair is admissible when the
fraction of covered Ys closer than ``dist_max_m`` reaches ``coverage``.
Admissible pairs are then matched one-to-one, greedily by ascending mean
distance.  This is compatible with, not identical to, the benchmark matcher.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .lane_model import DEFAULT_Y_POSITIONS, Lane3D, check_y_positions, sample_lane

CSV_HEADER = ("scene_id", "tp", "fp", "fn", "precision", "recall", "f_score",
              "x_err_near", "x_err_far", "z_err_near", "z_err_far")


@dataclass(frozen=True)
class MatchConfig:
    dist_max_m: float = 1.5
    coverage: float = 0.75
    y_eval: tuple = DEFAULT_Y_POSITIONS
    near_far_split: float = 40.0

    def __post_init__(self):
        if not self.dist_max_m > 0:
            raise ValueError("dist_max_m must be positive")
        if not 0 < self.coverage <= 1:
            raise ValueError("coverage must lie in (0, 1]")
        object.__setattr__(self, "y_eval", check_y_positions(self.y_eval))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def f_measure(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    fn: int
    matched_pred: tuple = ()
    matched_gt: tuple = ()
    pairs: tuple = ()  # (pred index, gt index)
    x_err_near: float = math.nan
    x_err_far: float = math.nan
    z_err_near: float = math.nan
    z_err_far: float = math.nan

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f_score(self) -> float:
        return f_measure(self.precision, self.recall)

    def csv_row(self, scene_id) -> list:
        return [scene_id, self.tp, self.fp, self.fn, self.precision, self.recall, self.f_score,
                self.x_err_near, self.x_err_far, self.z_err_near, self.z_err_far]


class _Sampled(NamedTuple):
    ys: np.ndarray
    x: np.ndarray
    z: np.ndarray


def _sample(lane: Lane3D, ys) -> _Sampled:
    pts = sample_lane(lane, ys).points
    return _Sampled(pts[:, 1], pts[:, 0], pts[:, 2])


def pair_distances(pred: _Sampled, gt: _Sampled):
    """Per covered gt Y: distance (inf where the prediction is undefined), dx, dz."""
    n = len(gt.ys)
    d = np.full(n, np.inf)
    dx = np.full(n, np.nan)
    dz = np.full(n, np.nan)
    idx = {float(y): i for i, y in enumerate(pred.ys)}
    for j, y in enumerate(gt.ys):
        i = idx.get(float(y))
        if i is None:
            continue
        dx[j] = pred.x[i] - gt.x[j]
        dz[j] = pred.z[i] - gt.z[j]
        d[j] = math.hypot(dx[j], dz[j])
    return d, dx, dz


def coverage_fraction(pred: Lane3D, gt: Lane3D, cfg: MatchConfig = MatchConfig()) -> float:
    d, _, _ = pair_distances(_sample(pred, cfg.y_eval), _sample(gt, cfg.y_eval))
    return float(np.mean(d < cfg.dist_max_m))


def match_lanes(preds: Sequence, gts: Sequence[Lane3D], cfg: MatchConfig = MatchConfig()) -> EvalResult:
    """``preds`` holds (confidence, Lane3D) pairs; confidence does not affect matching."""
    ps = [_sample(lane, cfg.y_eval) for _, lane in preds]
    gs = [_sample(lane, cfg.y_eval) for lane in gts]
    cand = []
    cache = {}
    for i, p in enumerate(ps):
        for j, g in enumerate(gs):
            d, dx, dz = pair_distances(p, g)
            if np.mean(d < cfg.dist_max_m) >= cfg.coverage:
                finite = np.isfinite(d)
                cand.append((float(d[finite].mean()), j, i))
                cache[i, j] = (g.ys, dx, dz)
    cand.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, j, i in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j))
    pairs.sort()
    near_x, far_x, near_z, far_z = [], [], [], []
    for i, j in pairs:
        ys, dx, dz = cache[i, j]
        ok = np.isfinite(dx)
        near = ok & (ys <= cfg.near_far_split)
        far = ok & (ys > cfg.near_far_split)
        near_x += list(np.abs(dx[near]))
        far_x += list(np.abs(dx[far]))
        near_z += list(np.abs(dz[near]))
        far_z += list(np.abs(dz[far]))

    def avg(v):
        return float(np.mean(v)) if v else math.nan

    tp = len(pairs)
    return EvalResult(
        tp=tp, fp=len(ps) - tp, fn=len(gs) - tp,
        matched_pred=tuple(i in used_p for i in range(len(ps))),
        matched_gt=tuple(j in used_g for j in range(len(gs))),
        pairs=tuple(pairs),
        x_err_near=avg(near_x), x_err_far=avg(far_x), z_err_near=avg(near_z), z_err_far=avg(far_z),
    )


class APResult(NamedTuple):
    ap: float
    max_f: float


def average_precision(evals_at_thresholds: Sequence) -> APResult:
    """Area under the PR curve from (threshold, precision, recall) triples.

    Precision is replaced by its monotone envelope (best precision at any
    recall at least as large) and integrated over recall as a step function
    starting from recall 0.
    """
    if not evals_at_thresholds:
        return APResult(0.0, 0.0)
    pr = np.array([(r, p) for _, p, r in evals_at_thresholds], dtype=float)
    max_f = max(f_measure(p, r) for r, p in pr)
    pr = pr[np.lexsort((-pr[:, 1], pr[:, 0]))]
    r, p = pr[:, 0], pr[:, 1]
    env = np.maximum.accumulate(p[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], r]))
    return APResult(float(np.sum(steps * env)), float(max_f))


def default_thresholds(n: int = 21) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def sweep(scenes: Sequence, cfg: MatchConfig = MatchConfig(), thresholds=None) -> list:
    """Aggregate (threshold, precision, recall) over scenes.

    ``scenes`` holds (preds, gts) per scene, preds as (confidence, Lane3D).
    Predictions with confidence >= threshold are kept.
    """
    thresholds = default_thresholds() if thresholds is None else thresholds
    out = []
    for t in thresholds:
        tp = fp = fn = 0
        for preds, gts in scenes:
            res = match_lanes([pc for pc in preds if pc[0] >= t], gts, cfg)
            tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
        out.append((float(t), _ratio(tp, tp + fp), _ratio(tp, tp + fn)))
    return out


@dataclass(frozen=True)
class Summary:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_score: float
    ap: float
    max_f: float


def evaluate(scenes: Sequence, cfg: MatchConfig = MatchConfig(), thresholds=None):
    """Per-scene results (all predictions kept) plus aggregate counts and AP."""
    results = [match_lanes(preds, gts, cfg) for preds, gts in scenes]
    tp = sum(r.tp for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    ap = average_precision(sweep(scenes, cfg, thresholds))
    return results, Summary(tp, fp, fn, p, r, f_measure(p, r), ap.ap, ap.max_f)


def results_csv(rows: Sequence) -> str:
    """CSV text for (scene_id, EvalResult) pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for sid, res in rows:
        w.writerow(res.csv_row(sid))
    return buf.getvalue()
