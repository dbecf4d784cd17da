import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanegeo.association import GroundTruthSlot, LossWeights, PredictionSlot, associate, Assignment
from lanegeo.errors import NonDifferentiablePoint
from lanegeo.geometry import CameraPose
from lanegeo.lane_model import Lane3D, sample_lane
from lanegeo.losses import (
    PROB_CLAMP,
    LossBreakdown,
    ParamVector,
    loss_3d,
    loss_and_gradient,
    loss_cam,
    loss_from_params,
    loss_gradient,
    loss_ground,
    loss_image,
    loss_total_stage1,
)
from lanegeo.synth import SceneConfig, generate_scene

W = LossWeights()
DUMMY = Lane3D((0, 0, 0, 0), (0, 0, 0, 0), 3, 100)
# loss_image of scene (seed 2024, id 0) with truth lanes and pitch raised by 0.01 rad
IMAGE_LOSS_PITCH_001 = 101.42285809736785


def truth_preds(scene, m=7, conf=1.0):
    return [PredictionSlot(conf, ln) for ln in scene.lanes] + [PredictionSlot(0.0, DUMMY)] * (m - len(scene.lanes))


def clamp_term(m, w=W):
    return -m * w.alpha1 * math.log(1 - PROB_CLAMP)


def test_loss_cam_examples():
    p = CameraPose(1.6, 0.1)
    assert loss_cam(p, p) == 0
    q = CameraPose(1.5, 0.08)
    assert loss_cam(q, p) == pytest.approx(0.12)
    assert loss_cam(q, p) == loss_cam(p, q)
    assert loss_cam(q, p, weights=(2.0, 0.0)) == pytest.approx(0.2)


def test_loss_3d_perfect_is_clamp_only(scene):
    preds = [PredictionSlot(1 - PROB_CLAMP, ln) for ln in scene.lanes] + \
        [PredictionSlot(PROB_CLAMP, DUMMY)] * (7 - len(scene.lanes))
    a = associate(scene.ground_truth_slots(), preds, W)
    assert loss_3d(scene.ground_truth_slots(), preds, W, a) == pytest.approx(clamp_term(7), abs=1e-12)


@pytest.mark.parametrize("p", [0.3, 0.9, 1.0])
def test_loss_3d_constant_offset(p):
    gt = Lane3D((1.0, 0.01, 0, 0), (0.2, 0.005, 0, 0), 3, 100)
    pred = Lane3D((1.5, 0.01, 0, 0), (0.2, 0.005, 0, 0), 3, 100)
    gts = [GroundTruthSlot(True, sample_lane(gt))]
    val = loss_3d(gts, [PredictionSlot(p, pred)], W, Assignment((0,), 0.0))
    pc = min(p, 1 - PROB_CLAMP)
    assert val == pytest.approx(W.alpha2 * 0.25 - W.alpha1 * math.log(pc), abs=1e-12)


def test_loss_3d_classification_only():
    preds = [PredictionSlot(0.0, DUMMY)] * 7
    a = associate([], preds, W)
    assert loss_3d([], preds, W, a) == pytest.approx(clamp_term(7), abs=1e-15)
    preds[3] = PredictionSlot(0.2, DUMMY)
    assert loss_3d([], preds, W, associate([], preds, W)) > clamp_term(7)


def test_loss_ground_flat_lanes_is_raw_mae():
    gt = Lane3D((1.0, 0.02, 0, 0), (0, 0, 0, 0), 3, 100)
    pred = Lane3D((1.4, 0.02, 0, 0), (0, 0, 0, 0), 3, 100)
    gts = [GroundTruthSlot(True, sample_lane(gt))]
    a = Assignment((0,), 0.0)
    val = loss_ground(gts, [PredictionSlot(1.0, pred)], CameraPose(1.5, 0.0), CameraPose(1.7, 0.0), W, a)
    # X residual 0.4 everywhere, Y residual 0, averaged over both coordinates
    assert val == pytest.approx(W.alpha2 * 0.2, abs=1e-12)
    same = loss_ground(gts, [PredictionSlot(1.0, gt)], CameraPose(1.5, 0.0), CameraPose(1.7, 0.0), W, a)
    assert same == 0.0


def test_loss_ground_height_scale_law():
    lane = Lane3D((1.0, 0.0, 0, 0), (1.0, 0, 0, 0), 3, 100)  # Z = 1 everywhere
    gts = [GroundTruthSlot(True, sample_lane(lane))]
    a = Assignment((0,), 0.0)
    truth = CameraPose(2.0, 0.05)
    vals = []
    for d in (0.0, 0.01, 0.02, 0.05, 0.1):
        vals.append(loss_ground(gts, [PredictionSlot(1.0, lane)], CameraPose(2.0 + d, 0.05), truth, W, a))
    assert vals[0] == 0
    assert all(b > a_ for a_, b in zip(vals, vals[1:]))
    ys = np.array(sample_lane(lane).ys)
    d = 0.05
    scale = (2 + d) / (1 + d)
    expected = W.alpha2 * np.mean(np.concatenate([np.full(len(ys), abs(scale - 2) * 1.0), abs(scale - 2) * ys]))
    assert vals[3] == pytest.approx(expected, rel=1e-12)


def test_zero_lanes_give_zero_geometry_losses():
    preds = [PredictionSlot(0.0, DUMMY)] * 7
    a = associate([], preds, W)
    p = CameraPose(1.6, 0.05)
    assert loss_ground([], preds, p, CameraPose(1.5, 0.0), W, a) == 0
    assert loss_image([], preds, p, CameraPose(1.5, 0.0), None, W, a) == 0


def test_loss_image_pitch_amplification(scene):
    preds = truth_preds(scene)
    gts = scene.ground_truth_slots()
    a = associate(gts, preds, W)
    k = scene.observations.intrinsics
    assert loss_image(gts, preds, scene.pose, scene.pose, k, W, a) == 0
    tilted = CameraPose(scene.pose.height_m, scene.pose.pitch_rad + 0.01)
    li = loss_image(gts, preds, tilted, scene.pose, k, W, a)
    lg = loss_ground(gts, preds, tilted, scene.pose, W, a)
    assert li > lg and li > 0
    assert li == pytest.approx(IMAGE_LOSS_PITCH_001, rel=1e-12)


def test_total_is_sum_and_compositional(scene):
    rng = np.random.default_rng(0)
    preds = []
    for ln in scene.lanes:
        preds.append(PredictionSlot(float(rng.uniform(0.5, 1)), Lane3D(
            np.array(ln.a) + rng.normal(0, 0.1, 4) * 100.0 ** -np.arange(4),
            np.array(ln.b) + rng.normal(0, 0.02, 4) * 100.0 ** -np.arange(4), ln.t1 + 1, ln.t2 - 2)))
    preds += [PredictionSlot(0.1, DUMMY)] * (7 - len(preds))
    pose = CameraPose(scene.pose.height_m + 0.03, scene.pose.pitch_rad - 0.004)
    br = loss_total_stage1(scene, preds, pose, W)
    assert br.total == pytest.approx(br.l_cam + br.l_3d + br.l_grd + br.l_img, abs=1e-12)
    gts = scene.ground_truth_slots()
    a = associate(gts, preds, W)
    k = scene.observations.intrinsics
    assert br.l_cam == loss_cam(pose, scene.pose)
    assert br.l_3d == pytest.approx(loss_3d(gts, preds, W, a), abs=1e-12)
    assert br.l_grd == pytest.approx(loss_ground(gts, preds, pose, scene.pose, W, a), abs=1e-12)
    assert br.l_img == pytest.approx(loss_image(gts, preds, pose, scene.pose, k, W, a), abs=1e-12)
    assert all(v >= 0 for v in (br.l_cam, br.l_grd, br.l_img))


def test_perfect_prediction_total(scene):
    br = loss_total_stage1(scene, truth_preds(scene), scene.pose, W)
    assert br.total == pytest.approx(clamp_term(7), abs=1e-12)


@pytest.mark.parametrize("sid", range(10))
def test_zero_at_truth_on_generated_scenes(sid):
    s = generate_scene(SceneConfig(seed=99), sid)
    br = loss_total_stage1(s, truth_preds(s), s.pose, W)
    assert br.total - clamp_term(7) < 1e-9


def test_equal_cost_assignments_give_equal_totals(scene):
    lane = scene.lanes[0]
    preds = [PredictionSlot(1.0, lane), PredictionSlot(1.0, lane)] + [PredictionSlot(0.0, DUMMY)] * 5
    gts = [scene.ground_truth_slots()[0]]
    a1 = associate(gts, preds, W)
    m = list(a1.mapping)
    j = 1 - m[0]
    other = m.index(j)
    m[0], m[other] = m[other], m[0]
    a2 = Assignment(tuple(m), 0.0)
    pose = CameraPose(scene.pose.height_m + 0.01, scene.pose.pitch_rad)
    k = scene.observations.intrinsics
    for f in (lambda a: loss_3d(gts, preds, W, a), lambda a: loss_ground(gts, preds, pose, scene.pose, W, a),
              lambda a: loss_image(gts, preds, pose, scene.pose, k, W, a)):
        assert f(a1) == f(a2)


@given(st.floats(-0.2, 0.2), st.floats(-0.02, 0.02), st.floats(-0.5, 0.5))
def test_geometry_losses_nonnegative(dh, dphi, dx):
    s = generate_scene(SceneConfig(seed=5), 1)
    preds = [PredictionSlot(1.0, Lane3D((ln.a[0] + dx,) + ln.a[1:], ln.b, ln.t1, ln.t2)) for ln in s.lanes]
    preds += [PredictionSlot(0.0, DUMMY)] * (7 - len(preds))
    br = loss_total_stage1(s, preds, CameraPose(s.pose.height_m + dh, s.pose.pitch_rad + dphi), W)
    assert br.l_grd >= 0 and br.l_img >= 0 and br.l_cam >= 0 and br.l_3d >= 0


def test_param_vector_layout(scene):
    lanes = list(scene.lanes) + [None] * (7 - len(scene.lanes))
    p = ParamVector.from_model(scene.pose, lanes)
    assert len(p.values) == 2 + 7 * (2 * 3 + 4) == ParamVector.size(7, 3)
    pose, back = p.to_model()
    assert pose == scene.pose
    assert back[:len(scene.lanes)] == list(scene.lanes)
    assert all(b is None for b in back[len(scene.lanes):])
    assert p.describe(0) == "height" and p.describe(1) == "pitch"
    assert p.describe(2) == "slot 0 a_0" and p.describe(2 + 4) == "slot 0 b_0" and p.describe(11) == "slot 0 t2"
    with pytest.raises(ValueError):
        ParamVector(np.zeros(5), 7, 3)


def test_gradient_zero_at_truth(scene):
    lanes = list(scene.lanes) + [None] * (7 - len(scene.lanes))
    p = ParamVector.from_model(scene.pose, lanes)
    with pytest.warns(NonDifferentiablePoint):
        g = loss_gradient(scene, p, W)
    assert np.linalg.norm(g) < 1e-6


def test_gradient_of_unmatched_slot_is_zero(scene):
    lanes = list(scene.lanes) + [None] * (7 - len(scene.lanes))
    p = ParamVector.from_model(scene.pose, lanes)
    v = p.values.copy()
    v[:2] += [0.02, 0.003]
    slot = len(scene.lanes)  # first padded slot
    v[p.b_slice(slot).start] = 0.7
    q = p.with_values(v)
    res = loss_and_gradient(scene, q, W)
    assert slot not in res.assignment.mapping[:len(scene.lanes)]
    assert res.gradient[p.b_slice(slot).start] == 0.0


def test_gradient_matches_value(scene):
    lanes = list(scene.lanes) + [None] * (7 - len(scene.lanes))
    p = ParamVector.from_model(scene.pose, lanes)
    v = p.values.copy()
    v[0] += 0.05
    q = p.with_values(v)
    res = loss_and_gradient(scene, q, W)
    assert res.value == pytest.approx(loss_from_params(scene, q, W), rel=1e-14)


def test_breakdown_total_default():
    b = LossBreakdown(1.0, 2.0, 3.0, 4.0)
    assert b.total == 10.0 and b.as_dict()["l_img"] == 4.0
