import dataclasses

import numpy as np
import pytest

from bakekit import data as dt
from bakekit import models as md
from bakekit import trainer as tr
from bakekit.errors import ConfigError, ShapeMismatchError
from bakekit.numerics import Tensor
from bakekit.sampling import SamplerConfig


class TestSgdStep:
    def test_plain_gradient_descent(self):
        p = [np.array([1.0, 2.0])]
        g = [np.array([0.5, -0.5])]
        v = [np.zeros(2)]
        tr.sgd_step(p, g, v, lr=0.1, momentum=0.0, weight_decay=0.0)
        assert np.allclose(p[0], [0.95, 2.05], atol=1e-15)

    def test_zero_grad_zero_velocity_no_change(self):
        p = [np.array([3.0])]
        tr.sgd_step(p, [np.zeros(1)], [np.zeros(1)], 0.1, 0.9, 0.0)
        assert p[0][0] == 3.0

    def test_two_momentum_steps_unrolled(self):
        p = [np.zeros(1)]
        g = [np.array([2.0])]
        v = [np.zeros(1)]
        tr.sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
        tr.sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
        # displacement = lr * (g + 1.9 g)
        assert abs(p[0][0] + 0.1 * (2.0 + 1.9 * 2.0)) < 1e-12

    def test_weight_decay(self):
        p = [np.array([10.0])]
        v = [np.zeros(1)]
        tr.sgd_step(p, [np.zeros(1)], v, lr=0.1, momentum=0.0, weight_decay=0.01)
        assert abs(p[0][0] - (10.0 - 0.1 * 0.1)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tr.sgd_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], 0.1, 0.9, 0.0)


class TestLrAt:
    def test_cosine_warmup_endpoint(self):
        sched = tr.CosineSchedule(total_epochs=100, warmup_epochs=5)
        assert tr.lr_at(sched, 5, 0.4) == 0.4

    def test_cosine_warmup_is_linear(self):
        sched = tr.CosineSchedule(total_epochs=100, warmup_epochs=5)
        assert abs(tr.lr_at(sched, 2.5, 0.4) - 0.2) < 1e-12

    def test_cosine_final_epoch_near_zero(self):
        sched = tr.CosineSchedule(total_epochs=100, warmup_epochs=5)
        assert tr.lr_at(sched, 99, 1.0) <= 0.02

    def test_step_schedule_late_milestones(self):
        sched = tr.StepSchedule(milestones=(100, 150), factor=0.1)
        assert tr.lr_at(sched, 50, 0.1) == 0.1
        assert abs(tr.lr_at(sched, 120, 0.1) - 0.01) < 1e-15
        assert abs(tr.lr_at(sched, 180, 0.1) - 0.001) < 1e-15

    def test_milestones_must_increase(self):
        with pytest.raises(ConfigError):
            tr.StepSchedule(milestones=(150, 100))


class TestEvaluate:
    def test_perfect_predictor(self):
        train, test = dt.synth_clusters(3, 20, 4, spread=1e-9, seed=0)

        class Oracle:
            def forward(self, x):
                data = x.data if isinstance(x, Tensor) else x
                logits = np.zeros((data.shape[0], 3))
                centers = np.stack(
                    [test.inputs[test.class_index[c][0]] for c in range(3)]
                ).astype(np.float64)
                d = ((data[:, None, :] - centers[None]) ** 2).sum(axis=2)
                logits = -d
                return None, Tensor(logits)

        top1, top5 = tr.evaluate(Oracle(), test)
        assert top1 == 1.0 and top5 == 1.0

    def test_constant_predictor_tie_break(self):
        train, _ = dt.synth_clusters(10, 10, 4, 1.0, seed=1)

        class Constant:
            def forward(self, x):
                n = (x.data if isinstance(x, Tensor) else x).shape[0]
                return None, Tensor(np.zeros((n, 10)))

        top1, top5 = tr.evaluate(Constant(), train)
        # ties resolve to the lowest class indices: classes 0..4 count as top-5
        assert top1 == 0.1 and top5 == 0.5

    def test_top1_le_top5(self):
        train, test = dt.synth_clusters(6, 10, 4, 2.0, seed=2)
        model = md.init(md.ModelDescriptor(4, 6, hidden=(8,)), seed=0)
        top1, top5 = tr.evaluate(model, test)
        assert top1 <= top5 <= 1.0


def small_config(method="vanilla", epochs=2, seed=0, **kwargs):
    return tr.TrainConfig(
        epochs=epochs,
        base_lr=0.05,
        method=method,
        sampler=SamplerConfig(n_hat=16, m=1, seed=seed),
        seed=seed,
        **kwargs,
    )


class TestTrain:
    def test_zero_epochs_is_a_no_op(self):
        train, test = dt.synth_clusters(3, 20, 4, 1.0, seed=0)
        model = md.init(md.ModelDescriptor(4, 3), seed=0)
        before = {k: v.data.copy() for k, v in model.params.items()}
        model, metrics = tr.train(model, train, test, small_config(epochs=0))
        assert metrics == []
        assert all(np.array_equal(before[k], model.params[k].data) for k in before)

    def test_separable_data_reaches_full_accuracy(self):
        train, test = dt.synth_clusters(4, 40, 8, spread=1e-6, seed=1)
        model = md.init(md.ModelDescriptor(8, 4, hidden=(16,)), seed=1)
        cfg = small_config(epochs=5, seed=1)
        _, metrics = tr.train(model, train, test, cfg)
        assert metrics[-1].test_top1 == 1.0

    def test_metric_stream_determinism(self):
        train, test = dt.synth_clusters(3, 30, 6, 2.0, seed=2)
        runs = []
        for _ in range(2):
            model = md.init(md.ModelDescriptor(6, 3), seed=2)
            _, metrics = tr.train(model, train, test, small_config("bake", epochs=3, seed=2))
            runs.append([(m.train_loss, m.train_ce, m.train_kl, m.test_top1) for m in metrics])
        assert runs[0] == runs[1]

    def test_loss_decomposition(self):
        train, test = dt.synth_clusters(3, 30, 6, 2.0, seed=3)
        model = md.init(md.ModelDescriptor(6, 3), seed=3)
        _, metrics = tr.train(model, train, test, small_config("bake", epochs=3, seed=3))
        for m in metrics:
            assert abs(m.train_loss - (m.train_ce + 1.0 * m.train_kl)) < 1e-6
            assert m.test_top1 <= m.test_top5
            assert m.wall_seconds >= 0.0

    def test_non_bake_methods_use_random_sampling(self):
        train, test = dt.synth_clusters(3, 30, 6, 2.0, seed=4)
        model = md.init(md.ModelDescriptor(6, 3), seed=4)
        _, metrics = tr.train(model, train, test, small_config("label_smoothing", epochs=1, seed=4))
        assert metrics[0].train_kl == 0.0

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            tr.TrainConfig(base_lr=0.0)
        with pytest.raises(ConfigError):
            tr.TrainConfig(method="magic")
