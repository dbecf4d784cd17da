import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lanegeo.association import (
    NON_LANE,
    Assignment,
    GroundTruthSlot,
    LossWeights,
    PredictionSlot,
    associate,
    cost_matrix,
    hungarian_assign,
    is_unique_optimum,
    pad_ground_truth,
    pair_cost,
)
from lanegeo.errors import TooManyGroundTruth
from lanegeo.lane_model import Frame, Lane3D, LanePolyline, sample_lane

W = LossWeights()


def brute_force(c):
    n = len(c)
    return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def gt_of(lane, ys=(3, 5, 10, 15, 20, 30, 40, 50, 65, 80, 100)):
    return GroundTruthSlot(True, sample_lane(lane, ys))


def test_pair_cost_examples():
    lane = Lane3D((2.0, 0.1, 0, 0), (0, 0, 0, 0), 3, 100)
    assert pair_cost(gt_of(lane), PredictionSlot(1.0, lane), W) == pytest.approx(-W.alpha1)
    assert pair_cost(NON_LANE, PredictionSlot(0.0, lane), W) == -W.alpha1
    ys = np.array([10.0, 20.0])
    gt = GroundTruthSlot(True, LanePolyline(Frame.SPACE3D, np.column_stack([2 + 0.1 * ys, ys, [0, 0]])))
    pred = PredictionSlot(0.5, Lane3D((0, 0.1, 0, 0), (0, 0, 0, 0), 10, 20))
    assert pair_cost(gt, pred, LossWeights(1, 5, 5)) == pytest.approx(4.5, abs=1e-12)


def test_hungarian_small_examples():
    c = np.ones((5, 5)) - np.eye(5)
    a = hungarian_assign(c)
    assert a.mapping == tuple(range(5)) and a.total_cost == 0
    a = hungarian_assign([[1, 2], [2, 1]])
    assert a.mapping == (0, 1) and a.total_cost == 2
    assert hungarian_assign(np.zeros((0, 0))).mapping == ()


def test_hungarian_matches_brute_force_7x7():
    rng = np.random.default_rng(7)
    for _ in range(200):
        c = rng.uniform(-5, 5, (7, 7))
        a = hungarian_assign(c)
        assert a.total_cost == pytest.approx(brute_force(c), abs=1e-9)
        assert a.total_cost == pytest.approx(c[np.arange(7), a.mapping].sum(), abs=1e-12)


@given(st.integers(1, 6).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.integers(-3, 3).map(float))))
def test_hungarian_optimal_with_ties(c):
    a = hungarian_assign(c)
    assert a.total_cost == pytest.approx(brute_force(c), abs=1e-9)
    best = brute_force(c)
    optima = [p for p in itertools.permutations(range(len(c)))
              if abs(sum(c[i, p[i]] for i in range(len(c))) - best) < 1e-9]
    assert a.mapping == min(optima)  # lexicographically smallest optimum


@given(arrays(np.float64, (5, 5), elements=st.floats(-10, 10)), st.integers(0, 4), st.floats(-50, 50))
def test_row_shift_keeps_mapping(c, row, shift):
    base = hungarian_assign(c)
    c2 = c.copy()
    c2[row] += shift
    assert hungarian_assign(c2).total_cost == pytest.approx(base.total_cost + shift, abs=1e-8)
    if is_unique_optimum(c, base):
        assert hungarian_assign(c2).mapping == base.mapping


def test_rejects_bad_matrices():
    with pytest.raises(ValueError):
        hungarian_assign(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian_assign([[0.0, np.inf], [0.0, 0.0]])
    with pytest.raises(ValueError):
        Assignment((0, 0), 0.0)


def random_lane(rng):
    return Lane3D((rng.uniform(-6, 6), rng.uniform(-0.05, 0.05), rng.uniform(-4e-4, 4e-4), 0.0),
                  (0.0, rng.uniform(-0.02, 0.02), 0.0, 0.0), 3, 100)


def test_associate_all_non_lane():
    preds = [PredictionSlot(0.0, Lane3D((0,), (0,), 3, 100)) for _ in range(7)]
    a = associate([], preds, W)
    assert a.total_cost == pytest.approx(-7 * W.alpha1)


def test_exact_twins_found():
    rng = np.random.default_rng(3)
    l1, l2 = random_lane(rng), random_lane(rng)
    preds = [PredictionSlot(0.0, random_lane(rng)) for _ in range(7)]
    preds[4] = PredictionSlot(1.0, l1)
    preds[1] = PredictionSlot(1.0, l2)
    a = associate([gt_of(l1), gt_of(l2)], preds, W)
    assert a.mapping[0] == 4 and a.mapping[1] == 1


def test_associate_random_against_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = rng.integers(0, 7)
        gts = [gt_of(random_lane(rng)) for _ in range(n)]
        preds = [PredictionSlot(float(rng.uniform()), random_lane(rng)) for _ in range(7)]
        a = associate(gts, preds, W)
        c = cost_matrix(pad_ground_truth(gts, 7), preds, W)
        assert a.total_cost == pytest.approx(brute_force(c), abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_padding_neutrality(seed):
    # the extra zero-confidence slot holds a lane far from every real lane, so it
    # can only ever absorb the extra non-lane ground-truth slot
    rng = np.random.default_rng(seed)
    gts = [gt_of(random_lane(rng)) for _ in range(3)]
    preds = [PredictionSlot(float(rng.uniform(0.2, 1)), random_lane(rng)) for _ in range(5)]
    base = associate(gts, preds, W)
    far = Lane3D((200.0, 0, 0, 0), (0, 0, 0, 0), 3, 100)
    grown = associate(gts, preds + [PredictionSlot(0.0, far)], W)
    assert grown.mapping[:3] == base.mapping[:3]
    assert grown.total_cost == pytest.approx(base.total_cost - W.alpha1)


def test_too_many_ground_truth():
    rng = np.random.default_rng(1)
    with pytest.raises(TooManyGroundTruth):
        pad_ground_truth([gt_of(random_lane(rng)) for _ in range(8)], 7)


def test_weights_and_slots_validate():
    with pytest.raises(ValueError):
        LossWeights(-1, 5, 5)
    with pytest.raises(ValueError):
        PredictionSlot(1.5, Lane3D((0,), (0,), 3, 100))
    with pytest.raises(ValueError):
        GroundTruthSlot(True)
