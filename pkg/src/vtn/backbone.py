"""Per-frame 2D feature extractors and the clip/frame batch reshape.

Neither backbone uses batch statistics, so a frame's features never depend on
which other frames share its batch.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .config import ModelConfig
from .nn import GroupNorm, Linear, Module, fan_in_std
from .tensor import Tensor, as_tensor


def stack_frames(clips: np.ndarray) -> np.ndarray:
    """(B, C, T, H, W) clips -> (B*T, C, H, W) frames, row b*T + t = clips[b, :, t]."""
    clips = np.asarray(clips)
    if clips.ndim != 5:
        raise ValueError(f"stack_frames expects a 5-D (B, C, T, H, W) array, got {clips.shape}")
    b, c, t, h, w = clips.shape
    return np.ascontiguousarray(clips.transpose(0, 2, 1, 3, 4)).reshape(b * t, c, h, w)


def unstack_frames(frames: np.ndarray, batch: int) -> np.ndarray:
    """Inverse of :func:`stack_frames`."""
    frames = np.asarray(frames)
    bt, c, h, w = frames.shape
    if bt % batch:
        raise ValueError(f"{bt} frames do not split into {batch} clips")
    return np.ascontiguousarray(frames.reshape(batch, bt // batch, c, h, w).transpose(0, 2, 1, 3, 4))


class LinearPatchBackbone(Module):
    """Non-overlapping patch embedding, a GELU MLP, then a mean over patches."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.patch_size = cfg.patch_size
        self.in_channels = cfg.in_channels
        self.frame_size = cfg.frame_size
        patch_dim = cfg.patch_size * cfg.patch_size * cfg.in_channels
        self.embed = Linear(patch_dim, cfg.d_model, rng, std=fan_in_std(patch_dim))
        self.proj = Linear(cfg.d_model, cfg.d_model, rng, std=fan_in_std(cfg.d_model))

    def __call__(self, frames) -> Tensor:
        x = as_tensor(frames)
        n, c, h, w = x.shape
        p = self.patch_size
        x = x.reshape(n, c, h // p, p, w // p, p).transpose(0, 2, 4, 3, 5, 1)
        x = x.reshape(n, (h // p) * (w // p), p * p * c)
        x = ops.gelu(self.embed(x))
        x = self.proj(x)
        return ops.mean(x, axis=1)


class TinyConvBackbone(Module):
    """Strided 3x3 convolutions (im2col + matmul) with group norm, pooled to d."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.in_channels = cfg.in_channels
        self.frame_size = cfg.frame_size
        widths = [cfg.in_channels, *cfg.conv_channels]
        self.convs = [Linear(9 * c_in, c_out, rng, std=fan_in_std(9 * c_in))
                      for c_in, c_out in zip(widths[:-1], widths[1:])]
        self.norms = [GroupNorm(cfg.conv_groups, c) for c in widths[1:]]
        self.proj = Linear(widths[-1], cfg.d_model, rng, std=fan_in_std(widths[-1]))

    def __call__(self, frames) -> Tensor:
        x = as_tensor(frames)
        n, c, h, w = x.shape
        x = x.transpose(0, 2, 3, 1)  # channels-last
        for conv, norm in zip(self.convs, self.norms):
            cols = ops.im2col(x, kernel=3, stride=2, pad=1)
            ho, wo = (h + 1) // 2, (w + 1) // 2
            x = ops.gelu(norm(conv(cols)))
            h, w = ho, wo
            x = x.reshape(n, h, w, x.shape[-1])
        x = x.reshape(n, h * w, x.shape[-1])
        return self.proj(ops.mean(x, axis=1))


def build_backbone(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    if cfg.backbone == "linear_patch":
        return LinearPatchBackbone(cfg, rng)
    if cfg.backbone == "tiny_conv":
        return TinyConvBackbone(cfg, rng)
    raise ValueError(f"unknown backbone {cfg.backbone!r}")


def extract_features(backbone: Module, frames, frozen: bool = False) -> Tensor:
    """Run the backbone over a (B*T, C, H, W) frame batch -> (B*T, d).

    With ``frozen`` the backbone runs outside the graph, so no backbone
    parameter can receive a gradient.
    """
    frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) frames, got {frames.shape}")
    _, c, h, w = frames.shape
    if c != backbone.in_channels or h != backbone.frame_size or w != backbone.frame_size:
        raise ValueError(f"frame shape {(c, h, w)} does not match backbone input "
                         f"{(backbone.in_channels, backbone.frame_size, backbone.frame_size)}")
    if frozen:
        from .tensor import no_grad
        with no_grad():
            return backbone(frames).detach()
    return backbone(frames)
