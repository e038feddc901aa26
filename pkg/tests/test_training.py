import math

import numpy as np
import pytest

from vtn import ops
from vtn.config import ConfigError, InferenceConfig, SynthTaskSpec, TrainConfig
from vtn.data import generate_synth_dataset
from vtn.inference import FullVideo
from vtn.model import VTN
from vtn.tensor import Tensor, backward
from vtn.training import (SGD, Adam, TrainingDiverged, _stack_batch, evaluate, learning_rate,
                          make_optimizer, topk_accuracy, train)

from conftest import tiny_model_config

INFER = InferenceConfig(full_video_frames=6)


def small_cfg(**kw):
    base = dict(epochs=1, batch_size=4, lr=1e-2, frames_per_clip=6, footprint_seconds=2.56,
                scale_min=8, scale_max=10)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    spec = SynthTaskSpec(task="order", frames_per_video=8, frame_size=8, glyph_size=4,
                         marker_span=1, num_train=12, num_val=6, seed=3)
    return generate_synth_dataset(spec)


class TestLearningRate:
    @pytest.mark.parametrize("schedule", ["step", "cosine"])
    def test_step_zero_is_base_lr(self, schedule):
        cfg = TrainConfig(lr=0.37, schedule=schedule)
        assert learning_rate(cfg, 0, 100) == 0.37

    def test_step_decay(self):
        cfg = TrainConfig(lr=1.0, step_milestones=(0.5, 0.75), step_gamma=0.1)
        assert [learning_rate(cfg, s, 100) for s in (49, 50, 75)] == pytest.approx([1.0, 0.1, 0.01])

    def test_cosine_end(self):
        assert learning_rate(TrainConfig(lr=2.0, schedule="cosine"), 100, 100) == pytest.approx(0.0)


class TestTopK:
    def test_perfect_oracle(self):
        labels = np.array([2, 0, 1])
        assert topk_accuracy(np.eye(3)[labels], labels, 1) == 1.0

    def test_ties_lowest_id(self):
        probs = np.full((4, 3), 1 / 3)
        assert topk_accuracy(probs, [0, 0, 1, 2], 1) == 0.5

    def test_top5_with_few_classes(self, rng):
        probs = rng.random((10, 4))
        assert topk_accuracy(probs, rng.integers(0, 4, 10), 5) == 1.0


class TestOptimizers:
    def test_sgd_momentum(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = SGD([("p", p)], momentum=0.5)
        for _ in range(2):
            p.grad = np.array([1.0])
            opt.step(0.1)
        assert p.data[0] == pytest.approx(1.0 - 0.1 - 0.15)

    def test_adam_matches_reference(self, rng):
        w0, grads = rng.normal(size=3), rng.normal(size=(4, 3))
        p = Tensor(w0.copy(), requires_grad=True)
        opt = Adam([("p", p)])
        m = v = np.zeros(3)
        w = w0.copy()
        for t, g in enumerate(grads, 1):
            p.grad = g.copy()
            opt.step(1e-2)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, w, rtol=1e-12)

    def test_skips_params_without_grad(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        for opt in (SGD([("p", p)]), Adam([("p", p)])):
            opt.step(1.0)
        assert p.data[0] == 1.0

    def test_factory(self):
        assert isinstance(make_optimizer([], TrainConfig()), SGD)
        assert isinstance(make_optimizer([], TrainConfig(optimizer="adam")), Adam)
        with pytest.raises(ConfigError):
            TrainConfig(optimizer="lbfgs").validate()


class TestTrain:
    @pytest.mark.parametrize("optimizer", ["sgd", "adam"])
    def test_zero_lr_leaves_parameters(self, data, optimizer):
        model = VTN(tiny_model_config(max_position=16))
        before = model.state_dict()
        train(model, data[0], data[1], small_cfg(lr=0.0, optimizer=optimizer), INFER)
        after = model.state_dict()
        assert all(before[k].tobytes() == after[k].tobytes() for k in before)

    def test_same_seed_same_log(self, data):
        logs = [train(VTN(tiny_model_config(max_position=16)), data[0], data[1],
                      small_cfg(epochs=2, optimizer="adam"), INFER)[1] for _ in range(2)]
        assert logs[0].to_csv() == logs[1].to_csv()
        assert [r.epoch for r in logs[0].records] == [0, 1]

    def test_one_small_sgd_step_lowers_loss(self, data):
        model = VTN(tiny_model_config(max_position=16), dtype=np.float64)
        frames, positions, labels = _stack_batch(data[0][:8], small_cfg(), 8,
                                                 np.random.default_rng(0))
        model.eval()
        loss = model.loss(frames, positions, labels)[0]
        backward(loss)
        SGD(model.trainable_parameters()).step(1e-4)
        assert model.loss(frames, positions, labels)[0].item() < loss.item()

    def test_nan_loss_aborts(self, data):
        model = VTN(tiny_model_config(max_position=16))
        model.head.fc2.bias.data[0] = np.nan
        with pytest.raises(TrainingDiverged, match="non-finite loss"):
            train(model, data[0], data[1], small_cfg(), INFER)

    def test_log_csv(self, data, tmp_path):
        _, log = train(VTN(tiny_model_config(max_position=16)), data[0], data[1], small_cfg(), INFER)
        path = tmp_path / "log.csv"
        log.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,train_top1,val_top1,val_top5"
        assert len(lines) == 2 and math.isfinite(float(lines[1].split(",")[1]))


class TestEvaluate:
    def constant_model(self, bias):
        model = VTN(tiny_model_config(max_position=16))
        model.head.fc2.weight.data[:] = 0.0
        model.head.fc2.bias.data[:] = bias
        return model

    def test_constant_head_majority_rate(self, data):
        videos = data[0]
        labels = np.array([v.label for v in videos])
        majority = int(np.bincount(labels, minlength=2).argmax())
        bias = np.zeros(2)
        bias[majority] = 1.0
        res = evaluate(self.constant_model(bias), videos, FullVideo(6))
        assert res.top1 == pytest.approx(np.mean(labels == majority))

    def test_tied_logits_pick_lowest_class(self, data):
        res = evaluate(self.constant_model(np.zeros(2)), data[0], FullVideo(6))
        assert res.top1 == pytest.approx(np.mean([v.label == 0 for v in data[0]]))
        assert res.top5 == 1.0

    def test_shuffle_is_seeded(self, data):
        model = VTN(tiny_model_config(max_position=16))
        a = evaluate(model, data[1], FullVideo(6), shuffle=True, seed=3).probs
        b = evaluate(model, data[1], FullVideo(6), shuffle=True, seed=3).probs
        assert a.tobytes() == b.tobytes()
