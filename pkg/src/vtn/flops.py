"""Analytic inference cost: grand total = views x per-view cost.

Counts cover matrix products only, at 2 operations per multiply-add
(``2*m*k*n`` for an (m, k) @ (k, n) product). Softmax, GELU, normalization
and other elementwise work is excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .config import EncoderConfig, ModelConfig
from .inference import Chunked, FullVideo, InferenceProtocol, MultiView, PrecomputedFeatures

HEADER = "# analytic FLOPs: matrix products only, 2*m*k*n per (m,k)@(k,n); elementwise ops excluded"


def linear_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def allowed_sizes(n: int, window: int) -> np.ndarray:
    """Per-token allowed-set sizes for ``n`` frames: [CLS] row first, then frames."""
    half = window // 2
    i = np.arange(n)
    frames = np.minimum(i + half, n - 1) - np.maximum(i - half, 0) + 1
    return np.concatenate([[n + 1], frames + 1]).astype(np.int64)


def attention_term(n: int, d: int, window: int | None, attention_mode: str = "learned") -> int:
    """Score and value-mix products of one layer; ``window=None`` means dense."""
    total = (n + 1) ** 2 if window is None else int(allowed_sizes(n, window).sum())
    products = 2 if attention_mode == "learned" else 1  # uniform mode skips q.k
    return products * 2 * total * d


def encoder_layer_flops(n: int, cfg: EncoderConfig, dense: bool = False) -> dict[str, int]:
    d, n_t = cfg.hidden_size, n + 1
    projections = 4 if cfg.attention_mode == "learned" else 2
    return {
        "projections": projections * linear_flops(n_t, d, d),
        "attention": attention_term(n, d, None if dense else cfg.window, cfg.attention_mode),
        "ffn": linear_flops(n_t, d, cfg.ffn_size) + linear_flops(n_t, cfg.ffn_size, d),
    }


def backbone_flops(cfg: ModelConfig) -> int:
    """Per-frame backbone cost."""
    s, c = cfg.frame_size, cfg.in_channels
    if cfg.backbone == "linear_patch":
        p = (s // cfg.patch_size) ** 2
        return (linear_flops(p, cfg.patch_size ** 2 * c, cfg.d_model)
                + linear_flops(p, cfg.d_model, cfg.d_model))
    total, h, c_in = 0, s, c
    for c_out in cfg.conv_channels:
        h = (h + 1) // 2
        total += linear_flops(h * h, 9 * c_in, c_out)
        c_in = c_out
    return total + linear_flops(1, c_in, cfg.d_model)


def head_flops(cfg: ModelConfig) -> int:
    d_mlp = cfg.d_mlp or cfg.d_model
    return linear_flops(1, cfg.d_model, d_mlp) + linear_flops(1, d_mlp, cfg.num_classes)


@dataclass
class FlopsReport:
    frames_per_view: int
    backbone_per_frame: int
    backbone: int
    encoder_projections: int
    encoder_attention: int
    encoder_ffn: int
    encoder: int
    head: int
    per_view: int
    num_views: int
    total: int
    dense_attention: int

    def rows(self) -> list[tuple[str, int]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def to_csv(self) -> str:
        lines = [HEADER, "component,flops"] + [f"{k},{v}" for k, v in self.rows()]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        lines = [HEADER] + [f"{k:<{width}}  {v:>16,d}" for k, v in self.rows()]
        return "\n".join(lines) + "\n"


def _view_shape(protocol: InferenceProtocol) -> tuple[int, int]:
    if isinstance(protocol, MultiView):
        return protocol.frames_per_view, protocol.num_views
    if isinstance(protocol, (FullVideo, Chunked, PrecomputedFeatures)):
        return protocol.target_frames, 1
    raise TypeError(f"unknown protocol {protocol!r}")


def count_flops(model_cfg: ModelConfig, protocol: InferenceProtocol) -> FlopsReport:
    """Closed-form cost of classifying one video under ``protocol``.

    Chunked and precomputed-feature inference run the same products as
    full-video inference, so they cost the same; extraction is included.
    """
    n, views = _view_shape(protocol)
    enc = model_cfg.encoder()
    layer = encoder_layer_flops(n, enc)
    dense_attn = attention_term(n, enc.hidden_size, None, enc.attention_mode)
    layers = enc.num_layers
    per_frame = backbone_flops(model_cfg)
    encoder = layers * sum(layer.values())
    head = head_flops(model_cfg)
    per_view = per_frame * n + encoder + head
    return FlopsReport(
        frames_per_view=n, backbone_per_frame=per_frame, backbone=per_frame * n,
        encoder_projections=layers * layer["projections"],
        encoder_attention=layers * layer["attention"], encoder_ffn=layers * layer["ffn"],
        encoder=encoder, head=head, per_view=per_view, num_views=views, total=views * per_view,
        dense_attention=layers * dense_attn)
