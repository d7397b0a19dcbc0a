"""Binary and text formats round-trip exactly at their stored precision.

Point clouds, labels, images, calibration, proposals, weights and
checkpoints each get a write/read round trip plus a corrupted-input check.
Floats stored as f32 survive a round trip bit-exactly when the values were
f32-representable to begin with, which the fixtures below arrange.
"""

from __future__ import annotations

import numpy as np
import pytest

from panodapt.core import Calibration, CameraImage, ClassRegistry, PointCloud
from panodapt.io import (
    frame_paths,
    load_frame,
    load_split,
    read_calibration,
    read_checkpoint,
    read_labels,
    read_manifest,
    read_point_cloud,
    read_ppm,
    read_proposals,
    read_registry,
    read_weights,
    save_frame,
    write_calibration,
    write_checkpoint,
    write_labels,
    write_manifest,
    write_point_cloud,
    write_ppm,
    write_proposals,
    write_registry,
    write_weights,
)
from panodapt.synth import SceneConfig, generate_scene


def _f32(values):
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def test_point_cloud_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(
        _f32(rng.normal(size=(17, 3))), _f32(rng.uniform(size=(17, 2)))
    )
    path = tmp_path / "a.pts"
    write_point_cloud(path, cloud)
    back = read_point_cloud(path)
    np.testing.assert_array_equal(back.positions, cloud.positions)
    np.testing.assert_array_equal(back.features, cloud.features)


def test_point_cloud_bad_magic(tmp_path):
    path = tmp_path / "a.pts"
    path.write_bytes(b"XXXX" + b"\0" * 12)
    with pytest.raises(ValueError, match="magic"):
        read_point_cloud(path)


def test_point_cloud_truncated(tmp_path):
    rng = np.random.default_rng(1)
    cloud = PointCloud(_f32(rng.normal(size=(5, 3))), _f32(rng.uniform(size=(5, 1))))
    path = tmp_path / "a.pts"
    write_point_cloud(path, cloud)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError, match="truncated"):
        read_point_cloud(path)


def test_labels_round_trip(tmp_path):
    ids = np.array([0, 1000, 2000, 3001, 5999], dtype=np.int64)
    path = tmp_path / "a.lbl"
    write_labels(path, ids)
    np.testing.assert_array_equal(read_labels(path), ids)
    assert read_labels(path).dtype == np.int64


def test_labels_reject_negative(tmp_path):
    with pytest.raises(ValueError):
        write_labels(tmp_path / "a.lbl", np.array([-1]))


def test_weights_round_trip(tmp_path):
    w = np.array([0, 1, 1, 0, 1], dtype=np.uint8)
    path = tmp_path / "a.wgt"
    write_weights(path, w)
    np.testing.assert_array_equal(read_weights(path, 5), w)
    with pytest.raises(ValueError):
        read_weights(path, 6)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    # quantize to the format's 8-bit lattice so the round trip is exact
    rgb = np.rint(rng.uniform(size=(6, 9, 3)) * 255.0) / 255.0
    path = tmp_path / "a.ppm"
    write_ppm(path, CameraImage(rgb))
    back = read_ppm(path)
    np.testing.assert_allclose(back.rgb, rgb, atol=1e-12)
    assert (back.height, back.width) == (6, 9)


def test_ppm_rejects_other_formats(tmp_path):
    path = tmp_path / "a.ppm"
    path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        read_ppm(path)


def test_calibration_round_trip(tmp_path):
    ext = np.eye(4)
    ext[:3, 3] = [0.5, -0.25, 1.0]
    calib = Calibration.from_values(350.0, 350.0, 320.0, 180.0, ext)
    path = tmp_path / "a.calib"
    write_calibration(path, calib)
    back = read_calibration(path)
    np.testing.assert_array_equal(back.intrinsic, calib.intrinsic)
    np.testing.assert_array_equal(back.extrinsic, calib.extrinsic)


def test_calibration_missing_key(tmp_path):
    path = tmp_path / "a.calib"
    path.write_text("fx=1.0\n")
    with pytest.raises(ValueError, match="missing"):
        read_calibration(path)


def test_proposals_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    h, w = 8, 11
    proposals = []
    for label in (3, 4, 5):
        mask = rng.uniform(size=(h, w)) < 0.3
        proposals.append((mask, label, float(np.float32(rng.uniform(0.5, 1.0)))))
    proposals.append((np.zeros((h, w), dtype=bool), 3, 0.75))  # empty mask
    path = tmp_path / "a.vfm"
    write_proposals(path, proposals, (h, w))
    back, shape = read_proposals(path)
    assert shape == (h, w)
    assert len(back) == len(proposals)
    for (bm, bl, bc), (m, l, c) in zip(back, proposals):
        np.testing.assert_array_equal(bm, m)
        assert bl == l
        assert bc == pytest.approx(c)


def test_proposals_reject_wrong_shape(tmp_path):
    with pytest.raises(ValueError, match="shape"):
        write_proposals(tmp_path / "a.vfm", [(np.zeros((2, 2), dtype=bool), 3, 0.9)], (3, 3))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    student = _f32(rng.normal(size=233))
    teacher = _f32(rng.normal(size=233))
    path = tmp_path / "a.ckpt"
    write_checkpoint(path, student, teacher, 1500)
    s, t, it = read_checkpoint(path)
    np.testing.assert_array_equal(s, student)
    np.testing.assert_array_equal(t, teacher)
    assert it == 1500


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "a.ckpt"
    path.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(ValueError, match="magic"):
        read_checkpoint(path)


def test_registry_default_when_missing(tmp_path):
    assert read_registry(tmp_path) == ClassRegistry.default()
    reg = ClassRegistry.default()
    write_registry(tmp_path, reg)
    assert read_registry(tmp_path) == reg


def test_manifest_round_trip(tmp_path):
    write_manifest(tmp_path, ["0000", "0001", "0002"])
    assert read_manifest(tmp_path) == ["0000", "0001", "0002"]
    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "missing")


def test_frame_and_split_round_trip(tmp_path):
    frame = generate_scene(SceneConfig(seed=7))
    frame = type(frame)(
        points=frame.points,
        image=frame.image,
        calibration=frame.calibration,
        labels=frame.labels,
        frame_id="0000",
    )
    split = tmp_path / "source"
    save_frame(split, frame)
    write_manifest(split, ["0000"])
    write_registry(tmp_path, frame.labels.registry)

    back = load_frame(split, "0000", frame.labels.registry)
    np.testing.assert_allclose(back.points.positions, frame.points.positions, atol=1e-6)
    np.testing.assert_array_equal(back.labels.ids, frame.labels.ids)
    assert back.frame_id == "0000"

    frames = load_split(tmp_path, "source")
    assert len(frames) == 1 and frames[0].frame_id == "0000"
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path, "target")


def test_load_frame_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_frame(tmp_path, "0000", ClassRegistry.default())


def test_frame_paths_layout(tmp_path):
    paths = frame_paths(tmp_path, "0042")
    assert paths[".pts"].name == "0042.pts"
    assert set(paths) == {".pts", ".lbl", ".ppm", ".calib"}
