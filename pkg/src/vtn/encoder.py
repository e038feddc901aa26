"""Longformer-style temporal encoder over per-frame features.

Token 0 is the [CLS] token. Frame token ``i`` attends to frame tokens ``j``
with ``|i - j| <= window // 2`` plus [CLS]; [CLS] attends to every token.
Frame rows go through the banded kernels, so their cost is linear in the
number of frames. The [CLS] row is a single dense row.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .config import EncoderConfig
from .nn import LayerNorm, Linear, Module, normal_init
from .tensor import Tensor, as_tensor


def half_window(n: int, window: int) -> int:
    return min(window // 2, max(n - 1, 0))


def window_index(n: int, window: int) -> np.ndarray:
    """Key slots for the ``n`` frame rows: (n, 2 + 2h) token ids, -1 for empty.

    Slot 0 is [CLS]; slot ``1 + s`` is frame ``i - h + s``.
    """
    h = half_window(n, window)
    frames = np.arange(n)[:, None] - h + np.arange(2 * h + 1)[None, :]
    tokens = np.where((frames >= 0) & (frames < n), frames + 1, -1)
    return np.concatenate([np.zeros((n, 1), dtype=np.int64), tokens], axis=1).astype(np.int64)


def allowed_mask(n: int, window: int) -> np.ndarray:
    """Dense (n+1, n+1) boolean attention pattern."""
    mask = np.zeros((n + 1, n + 1), dtype=bool)
    mask[0, :] = True
    mask[:, 0] = True
    i = np.arange(1, n + 1)
    mask[1:, 1:] = np.abs(i[:, None] - i[None, :]) <= window // 2
    return mask


@dataclass
class AttentionWeights:
    """Attention probabilities of one call, before attention dropout.

    ``cls_row``: (G, n+1) weights of the [CLS] query; ``band``: (G, n, A)
    banded frame-row weights addressed by ``index``.
    """

    cls_row: np.ndarray
    band: np.ndarray
    index: np.ndarray

    def dense(self) -> np.ndarray:
        g, n, a = self.band.shape
        out = np.zeros((g, n + 1, n + 1), dtype=self.band.dtype)
        out[:, 0, :] = self.cls_row
        rows = np.repeat(np.arange(n), a)
        cols = self.index.reshape(-1)
        keep = cols >= 0
        out[:, 1 + rows[keep], cols[keep]] = self.band.reshape(g, -1)[:, keep]
        return out


def sliding_window_attention(q: Optional[Tensor], k: Optional[Tensor], v: Tensor, window: int,
                             attention_mode: str = "learned", dropout: float = 0.0,
                             training: bool = False, rng: Optional[np.random.Generator] = None):
    """Windowed attention with a global token at index 0.

    Inputs are (G, n+1, d_head) or (n+1, d_head). In ``"uniform"`` mode the
    weights are the constant 1/|allowed set| and ``q``/``k`` are ignored.
    Returns ``(output, AttentionWeights)``.
    """
    if window < 2 or window % 2:
        raise ValueError(f"window must be even and >= 2, got {window}")
    v = as_tensor(v)
    squeeze = v.ndim == 2
    if squeeze:
        v = v.reshape(1, *v.shape)
        if q is not None:
            q = as_tensor(q).reshape(1, *q.shape)
            k = as_tensor(k).reshape(1, *k.shape)
    g, n_tok, d_head = v.shape
    n = n_tok - 1
    if n < 1:
        raise ValueError("attention needs at least one frame token besides [CLS]")
    index = window_index(n, window)
    valid = index >= 0
    dtype = v.dtype

    if attention_mode == "learned":
        if q is None or k is None:
            raise ValueError("learned attention needs queries and keys")
        if q.shape != v.shape or k.shape != v.shape:
            raise ValueError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
        scale = 1.0 / math.sqrt(d_head)
        s0 = ops.mul(ops.matmul(q[:, :1], k.transpose(0, 2, 1)), scale)
        p0 = ops.softmax(s0, axis=-1)
        sf = ops.mul(ops.band_scores(q[:, 1:], k, index), scale)
        pf = ops.masked_softmax(sf, valid)
    elif attention_mode == "uniform":
        p0 = Tensor(np.full((g, 1, n_tok), 1.0 / n_tok, dtype=dtype))
        counts = valid.sum(axis=1, keepdims=True)
        pf = Tensor(np.broadcast_to(valid / counts, (g, n, index.shape[1])).astype(dtype))
    else:
        raise ValueError(f"unknown attention mode {attention_mode!r}")

    weights = AttentionWeights(p0.data[:, 0].copy(), pf.data.copy(), index)
    p0d = ops.dropout(p0, dropout, training, rng)
    pfd = ops.dropout(pf, dropout, training, rng)
    out = ops.concat([ops.matmul(p0d, v), ops.band_mix(pfd, v, index)], axis=1)
    if squeeze:
        out = out.reshape(n_tok, d_head)
    return out, weights


def dense_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None):
    """Reference all-pairs attention; ``mask`` restricts the allowed pairs."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scale = 1.0 / math.sqrt(q.shape[-1])
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = ops.mul(ops.matmul(q, k.transpose(axes)), scale)
    p = ops.softmax(scores, axis=-1) if mask is None else ops.masked_softmax(scores, mask)
    return ops.matmul(p, v), p


def sinusoidal_encoding(positions, d: int) -> np.ndarray:
    """Fixed 1-D sine/cosine encoding: even dims sin, odd dims cos."""
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(d)
    freq = np.power(10000.0, (2 * (i // 2)) / d)
    angle = pos / freq
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class TokenSequence:
    embeddings: Tensor  # (B, n+1, d); row 0 is [CLS]
    frame_positions: np.ndarray  # (B, n) source-video frame indices

    @property
    def n(self) -> int:
        return self.embeddings.shape[1] - 1


@dataclass
class AttentionRecord:
    """Per-layer attention weights of one encoder call."""

    num_heads: int
    layers: list = field(default_factory=list)  # AttentionWeights, G = B * heads
    frame_positions: Optional[np.ndarray] = None

    def cls_weights(self, layer: int) -> np.ndarray:
        """(B, heads, n+1) [CLS]-row weights of ``layer``."""
        w = self.layers[layer].cls_row
        return w.reshape(-1, self.num_heads, w.shape[-1])

    def full_weights(self, layer: int) -> np.ndarray:
        w = self.layers[layer].dense()
        return w.reshape(-1, self.num_heads, *w.shape[1:])


class EncoderLayer(Module):
    """Post-norm layer: attention, residual, norm, GELU FFN, residual, norm."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d = cfg.hidden_size
        self.num_heads = cfg.num_heads
        self.window = cfg.window
        self.attention_mode = cfg.attention_mode
        self.attention_dropout = cfg.attention_dropout
        query, key = Linear(d, d, rng), Linear(d, d, rng)
        # uniform mode drops q/k from the parameter set; drawing them anyway keeps
        # every other weight identical to the learned-mode model of the same seed
        self.query = query if cfg.attention_mode == "learned" else None
        self.key = key if cfg.attention_mode == "learned" else None
        self.value = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ffn_in = Linear(d, cfg.ffn_size, rng)
        self.ffn_out = Linear(cfg.ffn_size, d, rng)
        self.norm2 = LayerNorm(d)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.num_heads
        return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3).reshape(b * h, n, d // h)

    def _merge(self, x: Tensor, b: int) -> Tensor:
        g, n, dh = x.shape
        h = self.num_heads
        return x.reshape(b, h, n, dh).transpose(0, 2, 1, 3).reshape(b, n, h * dh)

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None):
        b = x.shape[0]
        v = self._split(self.value(x))
        if self.attention_mode == "learned":
            q, k = self._split(self.query(x)), self._split(self.key(x))
        else:
            q = k = None
        ctx, weights = sliding_window_attention(q, k, v, self.window, self.attention_mode,
                                                self.attention_dropout, self.training, rng)
        x = self.norm1(ops.add(x, self.out(self._merge(ctx, b))))
        y = self.ffn_out(ops.gelu(self.ffn_in(x)))
        return self.norm2(ops.add(x, y)), weights


class TemporalEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        d = cfg.hidden_size
        self.cls_token = normal_init(rng, (d,))
        rows = cfg.max_position + 1 if cfg.pe_mode == "learned" else 1
        # row 0 marks the [CLS] slot in every mode; rows 1.. are frame positions
        self.position_table = normal_init(rng, (rows, d))
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.num_layers)]

    def build_sequence(self, features, frame_positions) -> TokenSequence:
        features = as_tensor(features)
        positions = np.asarray(frame_positions, dtype=np.int64)
        if features.ndim == 2:
            features = features.reshape(1, *features.shape)
            positions = positions.reshape(1, -1)
        b, n, d = features.shape
        if n < 1:
            raise ValueError("cannot build a token sequence from zero frames")
        if d != self.cfg.hidden_size:
            raise ValueError(f"feature width {d} does not match encoder hidden size "
                             f"{self.cfg.hidden_size}")
        if positions.shape != (b, n):
            raise ValueError(f"frame_positions shape {positions.shape} != {(b, n)}")
        if positions.min() < 0:
            raise ValueError("frame positions must be non-negative")

        cls = ops.add(ops.embedding(self.position_table, [0]), self.cls_token)  # (1, d)
        cls = ops.add(Tensor(np.zeros((b, 1, d), dtype=features.dtype)), cls)
        mode = self.cfg.pe_mode
        if mode == "learned":
            limit = self.cfg.max_position - 1
            if positions.max() > limit:
                warnings.warn(f"frame position {int(positions.max())} exceeds the learned table; "
                              f"clamping to {limit}", RuntimeWarning, stacklevel=2)
                positions = np.minimum(positions, limit)
            frames = ops.add(features, ops.embedding(self.position_table, positions + 1))
        elif mode == "sinusoidal":
            pe = sinusoidal_encoding(positions, d).astype(features.dtype)
            frames = ops.add(features, Tensor(pe))
        else:
            frames = features
        return TokenSequence(ops.concat([cls, frames], axis=1), positions)

    def __call__(self, seq: TokenSequence, rng: Optional[np.random.Generator] = None):
        """Returns the final [CLS] state (B, d) and the attention record."""
        x = seq.embeddings
        record = AttentionRecord(self.cfg.num_heads, [], seq.frame_positions)
        for layer in self.layers:
            x, weights = layer(x, rng)
            record.layers.append(weights)
        return x[:, 0], record
