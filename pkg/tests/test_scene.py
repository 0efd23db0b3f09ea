import json
import math

import numpy as np
import pytest

from cornpoint.geometry import Line3, line_point_at_height, project
from cornpoint.scene import (
    ConfigError,
    EmptyFrustum,
    NoiseConfig,
    RenderedGeometry,
    SceneConfig,
    SceneTruth,
    UnknownStalk,
    _noise_unit_field,
    apply_noise,
    default_camera_pose,
    default_intrinsics,
    generate_scene,
    render_frame,
    render_geometry,
    truth_insertion_point,
)

from conftest import single_stalk_scene, noiseless_frame


def test_generate_deterministic():
    a = json.dumps(generate_scene(SceneConfig(), 42).to_dict(), sort_keys=True)
    b = json.dumps(generate_scene(SceneConfig(), 42).to_dict(), sort_keys=True)
    assert a == b
    c = json.dumps(generate_scene(SceneConfig(), 43).to_dict(), sort_keys=True)
    assert a != c


def test_single_fixed_circular_stalk():
    cfg = SceneConfig(n_stalks=1, diameter_range=(0.02, 0.02), circular_fraction=1.0)
    scene = generate_scene(cfg, 1)
    assert len(scene.stalks) == 1
    sec = scene.stalks[0].section
    assert sec.a == pytest.approx(0.01) and sec.b == pytest.approx(0.01)


def test_scene_ranges_over_many_seeds():
    cfg = SceneConfig()
    diam = []
    for seed in range(1000):
        scene = generate_scene(cfg, seed)
        assert abs(scene.terrain.bound) <= 0.08 + 1e-12
        ys = sorted(s.axis.point[1] for s in scene.stalks if abs(s.axis.point[0] - scene.stalks[0].axis.point[0]) < 0.1)
        for s in scene.stalks:
            diam += [2 * s.section.a, 2 * s.section.b]
            assert 0.02 - 1e-12 <= s.pith_top_z - s.base_z <= 0.10 + 1e-12
            assert math.degrees(math.acos(s.axis.direction[2])) <= cfg.max_tilt_deg + 1e-9
            assert 0 <= s.stiffness <= 1
        gaps = np.diff(ys)
        assert np.all(gaps >= 0.05 - 2 * cfg.lateral_jitter - 1e-12)
    assert min(diam) >= 0.012 - 1e-12 and max(diam) <= 0.040 + 1e-12


@pytest.mark.parametrize("field,value", [
    ("diameter_range", (0.04, 0.01)),
    ("spacing_range", (0.4, 0.05)),
    ("terrain_amplitude", 0.2),
    ("stiffness_range", (0.0, 1.5)),
])
def test_bad_scene_config(field, value):
    with pytest.raises(ConfigError):
        generate_scene(SceneConfig(**{field: value}), 0)


def test_bad_noise_config():
    with pytest.raises(ConfigError):
        NoiseConfig(occlusion_fraction=1.5).validate()
    with pytest.raises(ConfigError):
        NoiseConfig(confidence_range=(0.9, 0.1)).validate()


def test_truth_insertion_point():
    scene = single_stalk_scene(x=0.3, y=0.5)
    p, sec = truth_insertion_point(scene, 0, 0.05)
    np.testing.assert_allclose(p, [0.3, 0.5, 0.05], atol=1e-15)
    tilted = single_stalk_scene(x=0.3, y=0.1, direction=(0.1, -0.05, 1.0))
    p, _ = truth_insertion_point(tilted, 0, 0.05)
    np.testing.assert_array_equal(p, line_point_at_height(tilted.stalks[0].axis, 0.05))
    with pytest.raises(UnknownStalk):
        truth_insertion_point(scene, 999, 0.05)


def test_scene_json_roundtrip():
    scene = generate_scene(SceneConfig(leaves_per_stalk=1), 5)
    d = scene.to_dict()
    assert d["schema_version"] == 1
    back = SceneTruth.from_dict(json.loads(json.dumps(d)))
    assert json.dumps(back.to_dict(), sort_keys=True) == json.dumps(d, sort_keys=True)


def _axis_column(stalk, cam_pose, intr, row):
    """Image column of the projected stalk axis at image row ``row``."""
    w2c = cam_pose.inverse()
    zs = np.linspace(0.0, 0.6, 601)
    uv = np.array([project(intr, w2c.apply(stalk.point_at(z))) for z in zs])
    order = np.argsort(uv[:, 1])
    return float(np.interp(row, uv[order, 1], uv[order, 0]))


def test_noiseless_centered_stalk_mask_band():
    scene = single_stalk_scene(x=0.45, y=0.0, radius=0.01)
    frame = noiseless_frame(scene)
    assert frame.n_instances == 1
    mask = frame.masks == 1
    rows = np.nonzero(mask.any(axis=1))[0]
    intr, pose = frame.intrinsics, frame.cam_pose
    for r in rows[::5]:
        cols = np.nonzero(mask[r])[0]
        assert cols[-1] - cols[0] + 1 == cols.size  # contiguous band
        u_axis = _axis_column(scene.stalks[0], pose, intr, r)
        lateral = abs(cols.mean() - u_axis) * frame.depth[r, int(round(cols.mean()))] / intr.fx
        assert lateral <= 0.0005


def test_noiseless_centerline_near_axis_many_scenes():
    # every mask row center of every fully visible stalk within reach lies within 1 mm
    # (lateral) of the axis
    cfg = SceneConfig(terrain_amplitude=0.0, circular_fraction=1.0)
    worst, checked = 0.0, 0
    for seed in range(15):
        scene = generate_scene(cfg, seed)
        try:
            frame = noiseless_frame(scene)
        except EmptyFrustum:
            continue
        W = frame.intrinsics.width
        for lab, sid in enumerate(frame.instance_stalk_ids, start=1):
            mask = frame.masks == lab
            if mask[:, 0].any() or mask[:, W - 1].any():
                continue
            if frame.depth[mask].max() > 1.0:
                continue  # half a pixel alone exceeds 0.8 mm beyond 1 m
            solo = SceneTruth([scene.stalks[sid]], [], scene.terrain, scene.row_spacing, 0)
            alone = render_geometry(solo, frame.cam_pose, frame.intrinsics).labels == 1
            if not np.array_equal(alone, mask):
                continue  # partly hidden behind another stalk
            checked += 1
            rows = np.nonzero(mask.any(axis=1))[0]
            widths = mask[rows].sum(axis=1)
            for r in rows[::10]:
                cols = np.nonzero(mask[r])[0]
                if cols.size < 0.9 * np.median(widths):
                    continue  # ground-contact rim, only part of the section is visible
                u_axis = _axis_column(scene.stalks[sid], frame.cam_pose, frame.intrinsics, r)
                z = frame.depth[r, cols].max()
                worst = max(worst, abs(cols.mean() - u_axis) * z / frame.intrinsics.fx)
    assert checked >= 20
    assert worst <= 0.001


def test_render_deterministic_and_labels_contiguous():
    scene = generate_scene(SceneConfig(), 7)
    pose, intr = default_camera_pose(), default_intrinsics()
    a = render_frame(scene, pose, intr, NoiseConfig(), 99)
    b = render_frame(scene, pose, intr, NoiseConfig(), 99)
    np.testing.assert_array_equal(a.masks, b.masks)
    np.testing.assert_array_equal(a.depth, b.depth)
    assert a.confidences == b.confidences
    labels = sorted(set(np.unique(a.masks)) - {0})
    assert labels == list(range(1, len(labels) + 1))
    assert len(a.confidences) == len(labels)
    assert all(0.8 <= c <= 1.0 for c in a.confidences)
    assert (a.depth >= 0).all()


def test_false_negative_rate_one_removes_everything():
    scene = generate_scene(SceneConfig(), 3)
    frame = render_frame(scene, default_camera_pose(), default_intrinsics(),
                         NoiseConfig(false_negative_rate=1.0), 0)
    assert frame.n_instances == 0 and not frame.masks.any()


def test_empty_frustum():
    scene = single_stalk_scene(x=-2.0, y=0.0)
    with pytest.raises(EmptyFrustum):
        noiseless_frame(scene)


def test_occlusion_removes_expected_fraction():
    removed = []
    for seed in range(20):
        scene = generate_scene(SceneConfig(terrain_amplitude=0.0), seed)
        geom = render_geometry(scene, default_camera_pose(), default_intrinsics())
        noise = NoiseConfig.zero()
        noise.occlusion_fraction = 0.3
        frame = apply_noise(geom, noise, seed)
        for new, lab in enumerate(frame.instance_stalk_ids, start=1):
            before = (geom.labels == lab + 1).sum()
            after = (frame.masks == new).sum()
            removed.append(1 - after / before)
    assert np.mean(removed) >= 0.30


def test_depth_noise_sigma_white():
    H, W = 480, 640
    depth = np.full((H, W), 0.4)
    geom = RenderedGeometry(np.zeros((H, W), np.int32), depth, default_intrinsics(), default_camera_pose())
    noise = NoiseConfig.zero()
    noise.depth_sigma0 = 0.0125
    frame = apply_noise(geom, noise, 0)
    err = frame.depth - depth
    assert err.size >= 1e5
    assert abs(err.std() / (0.0125 * 0.4**2) - 1) <= 0.10


def test_depth_noise_sigma_correlated_field():
    rng = np.random.default_rng(0)
    samples = np.concatenate([_noise_unit_field((480, 640), 80.0, rng)[::40, ::40].ravel()
                              for _ in range(200)])
    assert samples.size >= 1e3
    assert abs(samples.std() - 1) <= 0.10


def test_dropout_only_source_of_missing_depth():
    scene = generate_scene(SceneConfig(), 11)
    geom = render_geometry(scene, default_camera_pose(), default_intrinsics())
    noise = NoiseConfig.zero()
    noise.depth_dropout = 0.1
    frame = apply_noise(geom, noise, 0)
    labeled = frame.masks > 0
    missing = labeled & (frame.depth == 0)
    assert 0.05 < missing.sum() / labeled.sum() < 0.15
