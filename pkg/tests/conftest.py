"""Shared fixtures, finite-difference helpers and the acceptance summary hook."""

import numpy as np
import pytest

from vtn.config import ModelConfig, SynthTaskSpec
from vtn.data import generate_synth_dataset
from vtn.model import VTN
from vtn.tensor import Tensor, backward, default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Run the test body with float64 as the default element type."""
    with default_dtype(np.float64):
        yield


def numeric_grad(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` (taking a float64 array) at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return out


def analytic_grad(op, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of sum(op(x) * weights) through the tape."""
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    y = op(t)
    loss = (y * Tensor(weights)).sum()
    backward(loss)
    return t.grad


def assert_op_gradient(op, x: np.ndarray, rng, tol: float = 1e-4) -> None:
    """Tape gradient of ``op`` matches central differences at ``x``."""
    weights = rng.normal(size=op(Tensor(np.array(x, dtype=np.float64))).shape)
    got = analytic_grad(op, x, weights)
    want = numeric_grad(lambda a: float((op(Tensor(a)).data * weights).sum()), x)
    err = np.abs(got - want) / np.maximum(np.maximum(np.abs(got), np.abs(want)), 1e-3)
    assert err.max() <= tol, f"max relative error {err.max():.3e}"


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(frame_size=8, patch_size=4, d_model=8, d_ffn=16, num_heads=2, window=4,
                num_layers=1, attention_dropout=0.0, head_dropout=0.0, max_position=64)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    return VTN(tiny_model_config(), dtype=np.float64).eval()


@pytest.fixture(scope="session")
def small_order_data():
    spec = SynthTaskSpec(task="order", num_train=24, num_val=12, seed=5)
    return generate_synth_dataset(spec)


# ------------------------------------------------------------ acceptance
_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.when == "setup":
            detail = f"setup failed: {call.excinfo.typename if call.excinfo else ''}"
        _ACCEPTANCE.append((marker.args[0], marker.args[1], rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for ident, title, outcome, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0][2:])):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{ident:<5} {verdict}  {title}: {detail}")
