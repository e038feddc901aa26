"""The assembled network: spatial backbone -> temporal encoder -> MLP head."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .backbone import build_backbone, extract_features
from .config import ModelConfig
from .encoder import AttentionRecord, TemporalEncoder
from .head import ClassifierHead
from .nn import Module, init_std, rng_from, set_requires_grad
from .tensor import Tensor, as_tensor, default_dtype


class VTN(Module):
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        rng = rng_from(cfg.init_seed)
        with default_dtype(dtype), init_std(cfg.resolved_init_std()):
            self.backbone = build_backbone(cfg, rng)
            self.encoder = TemporalEncoder(cfg.encoder(), rng)
            self.head = ClassifierHead(cfg.head(), rng)
        self.frozen_backbone = False

    @property
    def dtype(self):
        return self.encoder.cls_token.dtype

    def freeze_backbone(self, frozen: bool = True) -> None:
        self.frozen_backbone = frozen
        set_requires_grad(self.backbone, not frozen)

    def features(self, frames: np.ndarray) -> Tensor:
        """(B, T, C, H, W) frames -> (B, T, d) per-frame features."""
        frames = np.asarray(frames, dtype=self.dtype)
        if frames.ndim != 5:
            raise ValueError(f"expected (B, T, C, H, W) frames, got {frames.shape}")
        b, t = frames.shape[:2]
        flat = frames.reshape(b * t, *frames.shape[2:])
        feats = extract_features(self.backbone, flat, frozen=self.frozen_backbone)
        return feats.reshape(b, t, feats.shape[-1])

    def classify_features(self, features, frame_positions,
                          rng: Optional[np.random.Generator] = None) -> tuple[Tensor, AttentionRecord]:
        """Encoder + head over (B, n, d) features -> (B, classes) logits."""
        features = as_tensor(features)
        seq = self.encoder.build_sequence(features, frame_positions)
        cls_state, record = self.encoder(seq, rng)
        return self.head(cls_state, rng), record

    def __call__(self, frames, frame_positions, rng: Optional[np.random.Generator] = None):
        return self.classify_features(self.features(frames), frame_positions, rng)

    def loss(self, frames, frame_positions, labels, rng=None) -> tuple[Tensor, Tensor]:
        logits, _ = self(frames, frame_positions, rng)
        return ops.cross_entropy(logits, labels), logits


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
