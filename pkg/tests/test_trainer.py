"""Training loop pieces: schedule, instance derivation, end-to-end fit.

The learning-rate schedule halves the base at phase progress 1/3, 1/2 and
2/3 (inclusive), so over 6 iterations of base 1.0 the rates are
1.0, 1.0, 0.5, 0.25, 0.125, 0.125 at iterations 0..5.
"""

from __future__ import annotations

import numpy as np
import pytest

from panodapt.core import ClassRegistry
from panodapt.pseudolabel import PredictionSet
from panodapt.synth import SceneConfig, ShiftParams, apply_domain_shift, generate_scene
from panodapt.trainer import (
    DomainAdapter,
    derive_instances,
    learning_rate,
    prediction_to_ids,
    read_trajectory,
    write_trajectory,
)

REG = ClassRegistry.default()


def test_learning_rate_schedule_boundaries():
    assert [learning_rate(1.0, it, 6) for it in range(6)] == [
        1.0, 1.0, 0.5, 0.25, 0.125, 0.125
    ]
    # progress exactly at a milestone already halves
    assert learning_rate(1.0, 1, 3) == 0.5    # 1/3
    assert learning_rate(1.0, 1, 2) == 0.25   # 1/2 passes 1/3 and 1/2
    assert learning_rate(1.0, 2, 3) == 0.125  # 2/3 passes all three
    assert learning_rate(1.0, 0, 0) == 1.0
    assert learning_rate(0.2, 0, 10) == pytest.approx(0.2)


def _blob(center, n, spread=0.1, seed=0):
    rng = np.random.default_rng(seed)
    return center + rng.normal(0.0, spread, size=(n, 3))


def test_derive_instances_splits_things_by_density():
    pts = np.vstack(
        [
            _blob(np.array([0.0, 0.0, 0.0]), 20, seed=1),
            _blob(np.array([5.0, 0.0, 0.0]), 20, seed=2),
            _blob(np.array([0.0, 5.0, 0.0]), 30, seed=3),
        ]
    )
    n = pts.shape[0]
    probs = np.zeros((n, 5))
    probs[:40, 2] = 0.9  # class id 3 (thing): two separate blobs
    probs[:40, 0] = 0.1
    probs[40:, 0] = 0.8  # class id 1 (stuff)
    probs[40:, 1] = 0.2
    pred = derive_instances(probs, pts, REG, eps=0.5, min_pts=5)
    assert isinstance(pred, PredictionSet)
    assert pred.classes.tolist() == [1, 3, 3]  # registry order, stuff first
    assert pred.masks[0].sum() == 30
    assert {pred.masks[1].sum(), pred.masks[2].sum()} == {20}
    # segment confidence is the mean point confidence inside the mask
    assert pred.class_conf[0] == pytest.approx(0.8)
    assert pred.class_conf[1] == pytest.approx(0.9)

    ids = prediction_to_ids(pred)
    assert set(np.unique(ids[:40])) == {3001, 3002}
    assert (ids[40:] == 1000).all()


def test_derive_instances_noise_points_are_uncovered():
    pts = np.vstack(
        [_blob(np.array([0.0, 0.0, 0.0]), 25, seed=4), np.array([[50.0, 0.0, 0.0]])]
    )
    probs = np.zeros((26, 5))
    probs[:, 4] = 1.0  # class id 5, thing
    pred = derive_instances(probs, pts, REG, eps=0.5, min_pts=5)
    assert pred.classes.tolist() == [5]
    assert not pred.masks[0][25]
    ids = prediction_to_ids(pred)
    assert ids[25] == 0
    assert (ids[:25] == 5001).all()


def test_trajectory_round_trip(tmp_path):
    rows = [
        {
            "iteration": 250, "pq": 0.5, "pq_things": 0.4, "pq_stuff": 0.6,
            "miou": 0.7, "loss_seg_source": 1.2, "loss_aux_source": 0.9,
            "loss_seg_target": 1.1, "loss_consistency": 0.001,
        },
        {
            "iteration": 500, "pq": 0.55, "pq_things": 0.45, "pq_stuff": 0.65,
            "miou": 0.72, "loss_seg_source": 1.0, "loss_aux_source": 0.8,
            "loss_seg_target": 1.05, "loss_consistency": 0.0005,
        },
    ]
    path = tmp_path / "trajectory.csv"
    write_trajectory(path, rows)
    assert read_trajectory(path) == rows


class TestDomainAdapter:
    def _frames(self, n_source=3, n_target=3):
        source = [generate_scene(SceneConfig(seed=s, ground_points=400, wall_points=120))
                  for s in range(n_source)]
        shift = ShiftParams(image_gamma=1.8, point_drop_prob=0.2, beam_keep_fraction=0.75)
        target = [
            apply_domain_shift(
                generate_scene(SceneConfig(seed=100 + s, ground_points=400, wall_points=120)),
                shift,
                seed=200 + s,
            )
            for s in range(n_target)
        ]
        return source, target

    def test_fit_sets_learned_attributes(self):
        source, target = self._frames()
        adapter = DomainAdapter(
            pretrain_iterations=12, adapt_iterations=8, learning_rate=0.5, seed=0
        )
        adapter.fit(source, target)
        assert adapter.student_params_.shape == (233,)
        assert adapter.teacher_params_.shape == (233,)
        assert adapter.n_iter_ == 20
        assert adapter.trajectory_ == []  # eval_interval 0
        preds = adapter.predict(source[:1])
        assert len(preds) == 1 and preds[0].shape == (source[0].points.n,)
        report = adapter.evaluate(source[:1])
        assert 0.0 <= report.pq <= 1.0

    def test_fit_is_deterministic(self):
        source, target = self._frames(2, 2)
        kwargs = dict(pretrain_iterations=6, adapt_iterations=6, learning_rate=0.5, seed=3)
        a = DomainAdapter(**kwargs).fit(source, target)
        b = DomainAdapter(**kwargs).fit(source, target)
        np.testing.assert_array_equal(a.student_params_, b.student_params_)
        np.testing.assert_array_equal(a.teacher_params_, b.teacher_params_)

    def test_teacher_is_ema_of_student(self):
        source, target = self._frames(2, 2)
        adapter = DomainAdapter(
            pretrain_iterations=6, adapt_iterations=0, learning_rate=0.5, seed=1
        )
        # without adaptation steps fit raises on empty target, so pass
        # targets but zero iterations: the teacher equals the student copy
        adapter.fit(source, target)
        np.testing.assert_array_equal(adapter.student_params_, adapter.teacher_params_)

    def test_trajectory_recorded_when_eval_frames_given(self):
        source, target = self._frames(2, 2)
        adapter = DomainAdapter(
            pretrain_iterations=4, adapt_iterations=5, eval_interval=2,
            learning_rate=0.5, seed=0,
        )
        adapter.fit(source, target, eval_frames=target[:1])
        iters = [row["iteration"] for row in adapter.trajectory_]
        assert iters == [2, 4, 5]  # every interval plus the final step
        for row in adapter.trajectory_:
            assert set(row) == {
                "iteration", "pq", "pq_things", "pq_stuff", "miou",
                "loss_seg_source", "loss_aux_source", "loss_seg_target",
                "loss_consistency",
            }

    def test_init_resumes_from_checkpoint_params(self):
        source, target = self._frames(2, 2)
        pre = DomainAdapter(pretrain_iterations=5, adapt_iterations=0,
                            learning_rate=0.5, seed=2).fit(source, [])
        resumed = DomainAdapter(pretrain_iterations=0, adapt_iterations=3,
                                learning_rate=0.5, seed=2)
        resumed.fit(source, target, init=pre.student_params_)
        assert not np.array_equal(resumed.student_params_, pre.student_params_)
        with pytest.raises(ValueError, match="init"):
            DomainAdapter(pretrain_iterations=0, adapt_iterations=0).fit(
                source, target, init=np.zeros(7)
            )

    def test_fit_validates_inputs(self):
        source, target = self._frames(1, 1)
        with pytest.raises(ValueError, match="source"):
            DomainAdapter().fit([], target)
        with pytest.raises(ValueError, match="target"):
            DomainAdapter(adapt_iterations=5).fit(source, [])
        with pytest.raises(ValueError, match="proposals"):
            DomainAdapter(pretrain_iterations=0, adapt_iterations=1).fit(
                source, target, target_proposals=[None, None]
            )
        unlabeled = type(source[0])(
            points=source[0].points, image=source[0].image,
            calibration=source[0].calibration,
        )
        with pytest.raises(ValueError, match="labels"):
            DomainAdapter(pretrain_iterations=1, adapt_iterations=0).fit(
                [unlabeled], target
            )

    def test_predict_requires_fit(self):
        source, _ = self._frames(1, 1)
        with pytest.raises(Exception):
            DomainAdapter().predict(source)
        adapter = DomainAdapter(pretrain_iterations=1, adapt_iterations=0).fit(source, [])
        with pytest.raises(ValueError, match="model"):
            adapter.predict(source, model="oracle")

    def test_sklearn_param_interface(self):
        adapter = DomainAdapter()
        params = adapter.get_params()
        assert params["ema_momentum"] == 0.99
        assert params["thing_conf_threshold"] == 0.63
        adapter.set_params(adapt_iterations=7, use_refinement=False)
        assert adapter.adapt_iterations == 7
        assert adapter.use_refinement is False

    def test_pretraining_learns_the_source_domain(self):
        source, _ = self._frames(4, 1)
        adapter = DomainAdapter(
            pretrain_iterations=300, adapt_iterations=0, learning_rate=2.0, seed=0
        )
        adapter.fit(source, [])
        report = adapter.evaluate(source)
        assert report.miou > 0.6
        assert report.pq > 0.45
