"""Scene generator and domain shift invariants.

Beam decimation keeps beam i iff floor((i+1)*f) > floor(i*f); for f = 0.5
over 32 beams that is the odd beams, 16 of 32.  Object samplers never emit
points on occluded surfaces: a box contributes nothing below its base plane
and a sphere nothing below its equator.
"""

from __future__ import annotations

import numpy as np
import pytest

from panodapt.core import PANOPTIC_BASE, ClassRegistry, ClassSpec
from panodapt.synth import (
    SceneConfig,
    ShiftParams,
    _beam_keep_mask,
    _sample_box,
    _sample_cylinder,
    _sample_sphere,
    apply_domain_shift,
    generate_scene,
    make_oracle_proposals,
)

BEAM_COUNT = 32


def test_generation_is_deterministic():
    a = generate_scene(SceneConfig(seed=11))
    b = generate_scene(SceneConfig(seed=11))
    np.testing.assert_array_equal(a.points.positions, b.points.positions)
    np.testing.assert_array_equal(a.points.features, b.points.features)
    np.testing.assert_array_equal(a.image.rgb, b.image.rgb)
    np.testing.assert_array_equal(a.labels.ids, b.labels.ids)
    c = generate_scene(SceneConfig(seed=12))
    assert c.points.n != a.points.n or not np.array_equal(
        c.points.positions, a.points.positions
    )


def test_scene_structure():
    cfg = SceneConfig(seed=3)
    frame = generate_scene(cfg)
    reg = cfg.registry
    cls = frame.labels.class_ids()
    inst = frame.labels.instance_ids()

    assert np.count_nonzero(cls == 1) == cfg.ground_points
    assert np.count_nonzero(cls == 2) == cfg.wall_points
    thing_mask = np.isin(cls, reg.thing_ids)
    n_obj = len(np.unique(inst[thing_mask]))
    assert cfg.object_count[0] <= n_obj <= cfg.object_count[1]
    # instance ids run 1..n over all thing objects
    assert sorted(np.unique(inst[thing_mask]).tolist()) == list(range(1, n_obj + 1))
    assert np.all(inst[~thing_mask] == 0)
    # per-object point counts respect the configured range
    for k in range(1, n_obj + 1):
        n_pts = np.count_nonzero(thing_mask & (inst == k))
        assert cfg.points_per_object[0] <= n_pts <= cfg.points_per_object[1]

    assert frame.points.features.shape == (frame.points.n, 1)
    assert frame.points.features.min() >= 0.0 and frame.points.features.max() <= 1.0
    assert frame.image.rgb.shape == (360, 640, 3)


def test_objects_stay_apart_and_off_the_wall():
    for seed in range(20):
        cfg = SceneConfig(seed=seed)
        frame = generate_scene(cfg)
        cls = frame.labels.class_ids()
        inst = frame.labels.instance_ids()
        thing = np.isin(cls, cfg.registry.thing_ids)
        centers = []
        for k in np.unique(inst[thing]):
            member = thing & (inst == k)
            centers.append(frame.points.positions[member, :2].mean(axis=0))
        for c in centers:
            assert np.hypot(*c) < 0.66 * cfg.extent  # clear of the wall band
        for i in range(len(centers)):
            for j in range(i + 1, len(centers)):
                assert np.hypot(*(centers[i] - centers[j])) > 2.0


def test_box_has_no_bottom_face():
    rng = np.random.default_rng(5)
    ground_z = -1.7
    pts = _sample_box(rng, 4000, ground_z)
    # base plane sits at ground_z; no sample may sit on the bottom face's
    # interior, so the fraction near the base must be tiny (side-face edges)
    near_base = np.count_nonzero(pts[:, 2] < ground_z + 1e-6)
    assert near_base / 4000 < 0.01
    assert pts[:, 2].min() >= ground_z - 1e-9


def test_sphere_upper_half_only():
    rng = np.random.default_rng(6)
    ground_z = -1.7
    pts = _sample_sphere(rng, 4000, ground_z)
    center_z = ground_z + (pts[:, 2].max() - ground_z) / 2.0
    assert pts[:, 2].min() >= center_z - 1e-6  # nothing below the equator


def test_cylinder_radius_constant():
    rng = np.random.default_rng(7)
    pts = _sample_cylinder(rng, 500, 0.0)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert r.std() < 1e-9


def test_identity_shift_is_a_bitwise_noop():
    frame = generate_scene(SceneConfig(seed=4))
    shifted = apply_domain_shift(frame, ShiftParams(), seed=99)
    assert shifted.image is frame.image
    np.testing.assert_array_equal(shifted.points.positions, frame.points.positions)
    np.testing.assert_array_equal(shifted.points.features, frame.points.features)
    np.testing.assert_array_equal(shifted.labels.ids, frame.labels.ids)


def test_shift_is_deterministic_and_preserves_geometry():
    frame = generate_scene(SceneConfig(seed=4))
    shift = ShiftParams(
        image_gamma=2.2, image_noise_sigma=0.05, point_drop_prob=0.3,
        beam_keep_fraction=0.5, feature_noise_sigma=0.2,
    )
    a = apply_domain_shift(frame, shift, seed=8)
    b = apply_domain_shift(frame, shift, seed=8)
    np.testing.assert_array_equal(a.points.positions, b.points.positions)
    np.testing.assert_array_equal(a.image.rgb, b.image.rgb)
    assert a.points.n < frame.points.n
    # surviving points keep their exact coordinates and labels
    key = {tuple(p): i for i, p in enumerate(frame.points.positions)}
    rows = [key[tuple(p)] for p in a.points.positions]
    np.testing.assert_array_equal(a.labels.ids, frame.labels.ids[rows])


def test_beam_keep_rule():
    lo, hi = -0.75, 0.55
    edges = lo + (np.arange(BEAM_COUNT) + 0.5) / BEAM_COUNT * (hi - lo)
    positions = np.stack(
        [np.cos(edges) * 10, np.zeros(BEAM_COUNT), np.sin(edges) * 10], axis=1
    )
    kept = _beam_keep_mask(positions, 0.5)
    expected = np.floor((np.arange(BEAM_COUNT) + 1) * 0.5) > np.floor(
        np.arange(BEAM_COUNT) * 0.5
    )
    np.testing.assert_array_equal(kept, expected)
    assert kept.sum() == 16
    np.testing.assert_array_equal(_beam_keep_mask(positions, 1.0), np.ones(32, bool))


def test_shift_that_removes_everything_raises():
    frame = generate_scene(SceneConfig(seed=4))
    with pytest.raises(ValueError, match="removed every point"):
        apply_domain_shift(frame, ShiftParams(point_drop_prob=1.0), seed=0)


def test_shift_params_validation():
    with pytest.raises(ValueError):
        ShiftParams(image_gamma=0.0)
    with pytest.raises(ValueError):
        ShiftParams(beam_keep_fraction=0.0)
    with pytest.raises(ValueError):
        ShiftParams(point_drop_prob=1.5)


def test_gamma_only_darkens_image():
    frame = generate_scene(SceneConfig(seed=4))
    shifted = apply_domain_shift(frame, ShiftParams(image_gamma=2.2), seed=0)
    np.testing.assert_allclose(shifted.image.rgb, frame.image.rgb ** 2.2, atol=1e-12)
    np.testing.assert_array_equal(shifted.points.positions, frame.points.positions)


def test_oracle_proposals_cover_visible_things():
    frame = generate_scene(SceneConfig(seed=9))
    proposals, shape = make_oracle_proposals(frame, flip_prob=0.0, seed=0)
    assert shape == (frame.image.height, frame.image.width)
    reg = frame.labels.registry
    thing_ids = set(int(t) for t in reg.thing_ids)
    for mask, label, conf in proposals:
        assert label in thing_ids
        assert 0.7 <= conf <= 0.95
        assert mask.any()
    # determinism
    again, _ = make_oracle_proposals(frame, flip_prob=0.0, seed=0)
    assert len(again) == len(proposals)
    for (m1, l1, c1), (m2, l2, c2) in zip(proposals, again):
        np.testing.assert_array_equal(m1, m2)
        assert (l1, c1) == (l2, c2)


def test_oracle_proposals_flip_labels_when_asked():
    frame = generate_scene(SceneConfig(seed=9, object_count=(6, 6)))
    clean, _ = make_oracle_proposals(frame, flip_prob=0.0, seed=1)
    flipped, _ = make_oracle_proposals(frame, flip_prob=1.0, seed=1)
    assert len(clean) == len(flipped)
    assert any(lc != lf for (_, lc, _), (_, lf, _) in zip(clean, flipped))


def test_registry_without_wall_class_skips_wall():
    reg = ClassRegistry([ClassSpec(1, "ground", False), ClassSpec(3, "box", True)])
    cfg = SceneConfig(seed=2, registry=reg)
    frame = generate_scene(cfg)
    assert not np.any(frame.labels.class_ids() == 2)
    assert np.count_nonzero(frame.labels.class_ids() == 1) == cfg.ground_points
