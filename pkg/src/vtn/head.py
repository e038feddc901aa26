from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .config import HeadConfig
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor, as_tensor


class ClassifierHead(Module):
    """layer norm -> linear -> GELU -> dropout -> linear."""

    def __init__(self, cfg: HeadConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.norm = LayerNorm(cfg.d)
        self.fc1 = Linear(cfg.d, cfg.d_mlp, rng)
        self.fc2 = Linear(cfg.d_mlp, cfg.num_classes, rng)

    def __call__(self, cls_state, rng: Optional[np.random.Generator] = None) -> Tensor:
        x = as_tensor(cls_state)
        if x.shape[-1] != self.cfg.d:
            raise ValueError(f"head expects width {self.cfg.d}, got {x.shape[-1]}")
        x = ops.gelu(self.fc1(self.norm(x)))
        x = ops.dropout(x, self.cfg.dropout, self.training, rng)
        return self.fc2(x)
