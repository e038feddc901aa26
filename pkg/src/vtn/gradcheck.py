"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class NonDifferentiableError(ValueError):
    """One-sided differences disagree: the function has a kink at the probe point."""


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float
    num_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _relative_error(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor] | Tensor, step: float = 1e-6,
              tolerance: float = 1e-4, floor: float = 1e-3, kink_tolerance: float = 1e-3,
              max_elements: int | None = None, rng: np.random.Generator | None = None
              ) -> GradcheckReport:
    """Compare ``backward`` gradients of ``f()`` against central differences.

    ``f`` closes over ``inputs`` (float64 tensors with ``requires_grad``) and
    returns a scalar. The relative error per element is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps near-zero gradients
    from turning rounding noise into huge ratios.

    Raises :class:`NonDifferentiableError` where the forward and backward
    one-sided differences disagree by more than ``kink_tolerance`` (relative).
    ``max_elements`` samples that many elements per input instead of all.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs float64 inputs")
        t.grad = None
    out = f()
    if out.data.size != 1 or out.ndim != 0:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    base = float(out.data)
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = (0.0, 0, (), 0.0, 0.0)
    checked = 0
    for which, (t, grad) in enumerate(zip(inputs, analytic)):
        flat = t.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            rng = rng or np.random.default_rng(0)
            positions = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        for pos in positions:
            orig = flat[pos]
            flat[pos] = orig + step
            up = float(f().data)
            flat[pos] = orig - step
            down = float(f().data)
            flat[pos] = orig
            numeric = (up - down) / (2 * step)
            fwd, bwd = (up - base) / step, (base - down) / step
            if abs(fwd - bwd) > kink_tolerance * max(1.0, abs(numeric)):
                index = np.unravel_index(pos, t.shape)
                raise NonDifferentiableError(
                    f"input {which} element {index}: one-sided differences {fwd:.6g} vs {bwd:.6g}")
            a = float(grad.reshape(-1)[pos])
            err = _relative_error(a, numeric, floor)
            checked += 1
            if err > worst[0]:
                worst = (err, which, np.unravel_index(pos, t.shape), a, numeric)
    for t in inputs:
        t.grad = None
    return GradcheckReport(worst[0], worst[1], tuple(int(i) for i in worst[2]), worst[3], worst[4],
                           checked, tolerance)


def _sweep_cases(seed: int):
    """(name, loss closure, inputs) for every differentiable module, float64, eval mode."""
    from . import ops
    from .config import ModelConfig
    from .encoder import EncoderLayer, TemporalEncoder
    from .head import ClassifierHead
    from .backbone import build_backbone
    from .nn import rng_from
    from .tensor import default_dtype

    rng = np.random.default_rng(seed)
    cases = []
    with default_dtype(np.float64):
        for tag in ("linear_patch", "tiny_conv"):
            cfg = ModelConfig(backbone=tag, frame_size=8, d_model=8, patch_size=4,
                              conv_channels=(4, 4))
            bb = build_backbone(cfg, rng_from(seed))
            frames = Tensor(rng.normal(size=(2, 1, 8, 8)), requires_grad=True)
            proj = rng.normal(size=(2, 8))
            cases.append((f"backbone.{tag}", lambda bb=bb, x=frames, c=proj: ops.sum(
                ops.mul(bb(x), Tensor(c))), [frames] + [p for _, p in bb.named_parameters()]))
        for mode in ("learned", "uniform"):
            cfg = ModelConfig(d_model=8, d_ffn=16, num_heads=2, window=4, attention_mode=mode,
                              attention_dropout=0.0).encoder()
            layer = EncoderLayer(cfg, rng_from(seed))
            layer.eval()
            x = Tensor(rng.normal(size=(2, 6, 8)), requires_grad=True)
            proj = rng.normal(size=(2, 6, 8))
            params = layer.parameters()
            cases.append((f"encoder_layer.{mode}", lambda l=layer, x=x, c=proj: ops.sum(
                ops.mul(l(x)[0], Tensor(c))), [x] + params))
        cfg = ModelConfig(d_model=8, d_ffn=16, num_layers=2, num_heads=2, window=4,
                          attention_dropout=0.0, max_position=16).encoder()
        enc = TemporalEncoder(cfg, rng_from(seed))
        enc.eval()
        feats = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True)
        positions = np.tile(np.arange(5), (2, 1))
        proj = rng.normal(size=(2, 8))
        cases.append(("temporal_encoder", lambda e=enc, f=feats, c=proj: ops.sum(ops.mul(
            e(e.build_sequence(f, positions))[0], Tensor(c))),
            [feats] + [p for _, p in enc.named_parameters()]))
        head = ClassifierHead(ModelConfig(d_model=8, num_classes=3, head_dropout=0.0).head(),
                              rng_from(seed))
        head.eval()
        state = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        labels = rng.integers(0, 3, size=4)
        cases.append(("head+cross_entropy", lambda h=head, s=state: ops.cross_entropy(h(s), labels),
                      [state] + [p for _, p in head.named_parameters()]))
    return cases


def module_sweep(seed: int = 0, tolerance: float = 1e-4,
                 max_elements: int | None = 24) -> list[tuple[str, GradcheckReport]]:
    """Gradcheck every differentiable module on small float64 instances."""
    out = []
    rng = np.random.default_rng(seed)
    for name, fn, inputs in _sweep_cases(seed):
        out.append((name, gradcheck(fn, inputs, tolerance=tolerance, max_elements=max_elements,
                                    rng=rng)))
    return out
