import numpy as np
import pytest

from vtn import ops
from vtn.config import HeadConfig
from vtn.gradcheck import gradcheck
from vtn.head import ClassifierHead
from vtn.model import VTN, softmax_np
from vtn.nn import rng_from
from vtn.tensor import Tensor, default_dtype

from conftest import tiny_model_config


def head(**kw):
    cfg = HeadConfig(**{"d": 8, "d_mlp": 6, "num_classes": 3, "dropout": 0.1, **kw})
    with default_dtype(np.float64):
        return ClassifierHead(cfg, rng_from(2))


class TestClassifierHead:
    def test_zero_weights_give_bias(self, rng):
        h = head().eval()
        h.fc1.weight.data[:] = 0.0
        h.fc2.weight.data[:] = 0.0
        h.fc2.bias.data[:] = [1.0, -2.0, 0.5]
        out = h(Tensor(rng.normal(size=(4, 8)))).data
        np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (4, 1)))

    def test_eval_bit_identical(self, rng):
        h = head().eval()
        x = Tensor(rng.normal(size=(2, 8)))
        assert h(x, np.random.default_rng(0)).data.tobytes() == \
            h(x, np.random.default_rng(9)).data.tobytes()

    def test_common_mode_invariance(self, rng):
        h = head().eval()
        x = rng.normal(size=(3, 8))
        for c in (-4.0, 0.3, 12.0):
            np.testing.assert_allclose(h(Tensor(x + c)).data, h(Tensor(x)).data, atol=1e-5)

    def test_gradcheck(self, rng):
        h = head(dropout=0.0).eval()
        x = Tensor(rng.uniform(-1, 1, size=(2, 8)), requires_grad=True)
        c = Tensor(rng.normal(size=(2, 3)))
        rep = gradcheck(lambda: ops.sum(ops.mul(h(x), c)), [x] + h.parameters())
        assert rep.max_rel_error <= 1e-4

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            head()(Tensor(rng.normal(size=(1, 5))))

    def test_training_dropout_needs_rng(self, rng):
        with pytest.raises(ValueError):
            head().train()(Tensor(rng.normal(size=(1, 8))))

    def test_inner_width_defaults_to_d(self):
        assert tiny_model_config().head().d_mlp == 8


class TestVTN:
    def test_forward_shapes(self, tiny_model, rng):
        logits, rec = tiny_model(rng.normal(size=(2, 5, 1, 8, 8)), np.tile(np.arange(5), (2, 1)))
        assert logits.shape == (2, 2)
        assert len(rec.layers) == 1

    def test_rejects_non_5d(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model.features(np.zeros((5, 1, 8, 8)))

    def test_same_seed_same_weights(self):
        a = VTN(tiny_model_config(init_seed=3)).state_dict()
        b = VTN(tiny_model_config(init_seed=3)).state_dict()
        c = VTN(tiny_model_config(init_seed=4)).state_dict()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert any(a[k].tobytes() != c[k].tobytes() for k in a)

    def test_freeze_backbone(self, tiny_model):
        tiny_model.freeze_backbone()
        names = [n for n, _ in tiny_model.trainable_parameters()]
        assert names and not any(n.startswith("backbone.") for n in names)

    def test_width_scaled_init(self):
        assert tiny_model_config(d_model=768).resolved_init_std() == pytest.approx(0.02)
        assert tiny_model_config(init_std=0.05).resolved_init_std() == 0.05

    def test_softmax_np(self):
        np.testing.assert_allclose(softmax_np(np.array([[0.0, np.log(3)]])), [[0.25, 0.75]])
