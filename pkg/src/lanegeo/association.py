"""Bipartite association of ground-truth lane slots to prediction slots.

Rows of every cost matrix are ground-truth slots, columns are predictions;
``Assignment.mapping[m]`` is the prediction assigned to ground-truth slot m.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dual import horner
from .errors import TooManyGroundTruth
from .lane_model import Frame, Lane3D, LanePolyline


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0  # classification
    alpha2: float = 5.0  # polyline fit
    alpha3: float = 5.0  # Y bounds

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class PredictionSlot:
    confidence: float
    lane: Lane3D

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruthSlot:
    is_lane: bool
    polyline: Optional[LanePolyline] = None

    def __post_init__(self):
        if self.is_lane != (self.polyline is not None):
            raise ValueError("polyline must be given exactly when is_lane is set")
        if self.polyline is not None and self.polyline.frame is not Frame.SPACE3D:
            raise ValueError("ground-truth polylines live in 3D")


NON_LANE = GroundTruthSlot(False)


@dataclass(frozen=True)
class Assignment:
    mapping: tuple
    total_cost: float

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError("mapping must be a permutation")


def polyline_mae(gt_points: np.ndarray, pred_points: np.ndarray) -> float:
    """Mean absolute error over all points and coordinates."""
    return float(np.mean(np.abs(np.asarray(gt_points) - np.asarray(pred_points))))


def pair_cost(gt: GroundTruthSlot, pred: PredictionSlot, w: LossWeights) -> float:
    """Matching cost between one ground-truth slot and one prediction.

    The prediction polynomials are evaluated at the ground-truth Y positions,
    so only X and Z residuals enter the mean absolute error.
    """
    if not gt.is_lane:
        return -w.alpha1 * (1.0 - pred.confidence)
    pts = gt.polyline.points
    ys = pts[:, 1]
    x = horner(pred.lane.a, ys)
    z = horner(pred.lane.b, ys)
    fit = polyline_mae(pts[:, [0, 2]], np.column_stack([x, z]))
    bounds = abs(ys[0] - pred.lane.t1) + abs(ys[-1] - pred.lane.t2)
    return -w.alpha1 * pred.confidence + w.alpha2 * fit + w.alpha3 * bounds


def cost_matrix(gts: Sequence[GroundTruthSlot], preds: Sequence[PredictionSlot], w: LossWeights) -> np.ndarray:
    return np.array([[pair_cost(g, p, w) for p in preds] for g in gts], dtype=float).reshape(
        len(gts), len(preds)
    )


def _hungarian(c: np.ndarray):
    """Shortest augmenting path Hungarian method, O(n^3).

    Returns (row potentials, column potentials, column assigned to each row)
    with ``c[i, j] - u[i] - v[j] >= 0`` and equality on the assignment.
    """
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=int)  # 1-based rows, 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used
            free[0] = False
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free[1:], minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return u[1:], v[1:], col_of_row


def _has_perfect_matching(adj: np.ndarray, rows: list, cols: set) -> bool:
    match = {}

    def augment(r, seen):
        for cidx in np.flatnonzero(adj[r]):
            c = int(cidx)
            if c in cols and c not in seen:
                seen.add(c)
                if c not in match or augment(match[c], seen):
                    match[c] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def _lexicographic_optimum(tight: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching on the tight-edge graph."""
    n = len(start)
    if tight.sum() == n:
        return start
    mapping = np.empty(n, dtype=int)
    free = set(range(n))
    for i in range(n):
        for j in sorted(free):
            if not tight[i, j]:
                continue
            if _has_perfect_matching(tight, list(range(i + 1, n)), free - {j}):
                mapping[i] = j
                free.discard(j)
                break
    return mapping


def hungarian_assign(cost) -> Assignment:
    """Globally optimal assignment for a square cost matrix.

    Among equal-cost optima the lexicographically smallest mapping is
    returned, i.e. earlier ground-truth slots take the lowest prediction
    index available to them. Optimal assignments are exactly the perfect
    matchings on zero-reduced-cost edges, which makes the tie rule cheap.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    n = c.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    u, v, col_of_row = _hungarian(c)
    tol = 1e-9 * max(1.0, float(np.abs(c).max()))
    tight = (c - u[:, None] - v[None, :]) <= tol
    mapping = _lexicographic_optimum(tight, col_of_row)
    total = float(c[np.arange(n), mapping].sum())
    return Assignment(tuple(int(j) for j in mapping), total)


def is_unique_optimum(cost, assignment: Assignment) -> bool:
    """False when swapping any two assigned columns keeps the total cost."""
    c = np.asarray(cost, dtype=float)
    m = np.asarray(assignment.mapping)
    tol = 1e-9 * max(1.0, float(np.abs(c).max()))
    for i in range(len(m)):
        for k in range(i + 1, len(m)):
            swapped = c[i, m[k]] + c[k, m[i]]
            if abs(swapped - (c[i, m[i]] + c[k, m[k]])) <= tol:
                return False
    return True


def pad_ground_truth(gts: Sequence[GroundTruthSlot], m: int) -> list:
    real = [g for g in gts if g.is_lane]
    if len(real) > m:
        raise TooManyGroundTruth(f"{len(real)} lanes exceed {m} prediction slots")
    slots = list(gts) if len(gts) <= m else real
    return slots + [NON_LANE] * (m - len(slots))


def associate(gts: Sequence[GroundTruthSlot], preds: Sequence[PredictionSlot], w: LossWeights) -> Assignment:
    """Pad the ground truth with non-lanes to len(preds) and solve the matching."""
    padded = pad_ground_truth(gts, len(preds))
    return hungarian_assign(cost_matrix(padded, preds, w))
