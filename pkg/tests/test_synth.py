import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanegeo.errors import RetryExhausted
from lanegeo.files import scene_to_dict
from lanegeo.geometry import project_to_ground, space_to_image_xy
from lanegeo.lane_model import eval_lane, sample_lane
from lanegeo.synth import (
    Elevation,
    SceneConfig,
    elevation_profile,
    generate_dataset,
    generate_scene,
    render_scene,
    with_ground_observations,
)

seeds = st.integers(0, 2**64 - 1)
ids = st.integers(0, 10_000)


def reprojection_residual(scene):
    worst = 0.0
    for ob in scene.observations.image_polylines:
        lane = scene.lanes[ob.lane_index]
        x, z = eval_lane(lane, ob.ys)
        u, v = space_to_image_xy(x, ob.ys, z, scene.pose.height_m, scene.pose.pitch_rad,
                                 scene.observations.intrinsics)
        worst = max(worst, np.abs(np.column_stack([u, v]) - ob.image.points).max())
    return worst


@given(seeds, ids)
def test_noiseless_observations_reproject_exactly(seed, sid):
    assert reprojection_residual(generate_scene(SceneConfig(seed=seed), sid)) == 0.0


@given(seeds, ids)
def test_ranges_respected(seed, sid):
    cfg = SceneConfig(seed=seed)
    s = generate_scene(cfg, sid)
    assert 1.4 <= s.pose.height_m <= 1.8
    assert 0 <= s.pose.pitch_deg <= 10
    assert 2 <= len(s.lanes) <= 6
    for ln in s.lanes:
        assert (ln.t1, ln.t2) == (3.0, 100.0)
    center = np.mean([eval_lane(ln, np.linspace(3, 100, 50))[0] for ln in s.lanes], axis=0)
    assert np.abs(center).max() <= 8.0 + 1e-9
    z = np.concatenate([sample_lane(ln).points[:, 2] for ln in s.lanes])
    assert np.all(z <= 0.5 * s.pose.height_m + 1e-12)
    assert all(ob.lane_index == i for i, ob in enumerate(s.observations.image_polylines))


@given(seeds, ids)
def test_flat_lanes_are_parallel(seed, sid):
    s = generate_scene(SceneConfig(seed=seed, elevation=Elevation.FLAT), sid)
    pts = [sample_lane(ln).points for ln in s.lanes]
    for p in pts:
        assert np.all(p[:, 2] == 0)
    h = s.pose.height_m
    ground = [np.column_stack(project_to_ground(p[:, 0], p[:, 1], p[:, 2], h)) for p in pts]
    for g1, g2 in zip(ground, ground[1:]):
        gap = g2[:, 0] - g1[:, 0]
        np.testing.assert_allclose(gap, 3.7, atol=1e-9)


@pytest.mark.parametrize("dh", [0.0, 0.1, 0.3])
def test_uphill_ground_projection_converges_toward_the_bottom(dh):
    # Z grows with Y uphill, so h / (h - Z) grows with Y: lanes spread with distance
    for sid in range(20):
        s = generate_scene(SceneConfig(seed=8, elevation=Elevation.UPHILL), sid)
        assert s.lanes[0].b[1] > 0
        h = s.pose.height_m + dh
        pts = [sample_lane(ln).points for ln in s.lanes]
        xs = [project_to_ground(p[:, 0], p[:, 1], p[:, 2], h)[0] for p in pts]
        gap = xs[1] - xs[0]
        z = pts[0][:, 2]
        rising = np.diff(z) > 0
        assert np.all(np.diff(gap)[rising] > 0)


def test_elevation_profiles():
    assert np.all(elevation_profile(Elevation.FLAT, 0.03) == 0)
    up = elevation_profile(Elevation.UPHILL, 0.03)
    np.testing.assert_array_equal(elevation_profile(Elevation.DOWNHILL, 0.03), -up)
    assert up[1] == 0.03


def test_downhill_goes_below_ground():
    s = generate_scene(SceneConfig(seed=1, elevation=Elevation.DOWNHILL), 0)
    assert sample_lane(s.lanes[0]).points[:, 2].max() <= 0 and s.lanes[0].b[1] < 0


@given(seeds, ids)
def test_deterministic(seed, sid):
    cfg = SceneConfig(seed=seed, noise_px=0.5)
    assert scene_to_dict(generate_scene(cfg, sid)) == scene_to_dict(generate_scene(cfg, sid))


def test_dataset_order_independent():
    cfg = SceneConfig(seed=4, noise_px=1.0)
    ds = generate_dataset(cfg, 6)
    for i in (5, 2, 0):
        assert scene_to_dict(generate_scene(cfg, i)) == scene_to_dict(ds[i])


def test_noise_is_image_space_and_shares_structure():
    quiet = generate_scene(SceneConfig(seed=3), 7)
    noisy = generate_scene(SceneConfig(seed=3, noise_px=1.0), 7)
    assert quiet.pose == noisy.pose and quiet.lanes == noisy.lanes
    d = np.concatenate([(a.image.points - b.image.points).ravel() for a, b in
                        zip(quiet.observations.image_polylines, noisy.observations.image_polylines)])
    assert 0.5 < d.std() < 1.5


def test_ground_observations_are_truth_back_projections():
    s = generate_scene(SceneConfig(seed=6, ground_observations=True), 2)
    for ob in s.observations.image_polylines:
        p = sample_lane(s.lanes[ob.lane_index]).points
        xg, yg = project_to_ground(p[:, 0], p[:, 1], p[:, 2], s.pose.height_m)
        np.testing.assert_allclose(ob.ground.points, np.column_stack([xg, yg]), atol=1e-9)
    again = with_ground_observations(generate_scene(SceneConfig(seed=6), 2))
    for a, b in zip(again.observations.image_polylines, s.observations.image_polylines):
        np.testing.assert_array_equal(a.ground.points, b.ground.points)


def test_retry_exhausted():
    with pytest.raises(RetryExhausted):
        generate_scene(SceneConfig(seed=0, clip_to_image=True, image_size=(2, 2)), 0)


def test_clip_to_image_keeps_visible_points():
    s = generate_scene(SceneConfig(seed=2, clip_to_image=True), 3)
    for ob in s.observations.image_polylines:
        uv = ob.image.points
        assert np.all((uv[:, 0] >= 0) & (uv[:, 0] < 480) & (uv[:, 1] >= 0) & (uv[:, 1] < 360))


def test_config_validation_and_echo():
    with pytest.raises(ValueError):
        SceneConfig(n_lanes_range=(2, 8))
    with pytest.raises(ValueError):
        SceneConfig(noise_px=-1)
    with pytest.raises(ValueError):
        SceneConfig(height_range=(1.8, 1.4))
    cfg = SceneConfig(seed=5, elevation="uphill", noise_px=0.25)
    assert SceneConfig.from_dict(cfg.as_dict()) == cfg


def test_render_zero_lanes_is_black():
    s = generate_scene(SceneConfig(seed=1, n_lanes_range=(0, 0)), 0)
    assert not s.lanes
    assert np.all(render_scene(s).data == 0)


def test_render_hits_every_sample():
    s = generate_scene(SceneConfig(seed=12), 4)
    img = render_scene(s, 480, 360, 2.0)
    assert img.data.max() == 1.0 and img.data.min() == 0.0
    for ob in s.observations.image_polylines:
        for u, v in ob.image.points:
            if 0 <= u < 480 and 0 <= v < 360:
                assert img.data[int(v), int(u), 0] >= 0.5
