"""[CLS] attention export and marker-frame attention statistics."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .encoder import AttentionRecord

ATTENTION_FIELDS = ("layer", "head", "token_index", "frame_position", "weight")


def attention_rows(record: AttentionRecord, video: int = 0) -> list[tuple]:
    """One row per (layer, head, token) of the [CLS] attention row.

    Token 0 is [CLS] itself and carries frame_position -1.
    """
    if not record.layers:
        raise ValueError("attention record is empty (encoder has no layers)")
    positions = np.asarray(record.frame_positions)[video]
    rows = []
    for layer in range(len(record.layers)):
        weights = record.cls_weights(layer)[video]
        for head in range(record.num_heads):
            for token, w in enumerate(weights[head]):
                pos = -1 if token == 0 else int(positions[token - 1])
                rows.append((layer, head, token, pos, float(w)))
    return rows


def export_attention(record: AttentionRecord, path, video: int = 0) -> int:
    """Write the [CLS] attention CSV; returns the number of data rows."""
    rows = attention_rows(record, video)
    lines = [",".join(ATTENTION_FIELDS)]
    lines += [f"{l},{h},{t},{p},{w:.9g}" for l, h, t, p, w in rows]
    Path(path).write_text("\n".join(lines) + "\n")
    return len(rows)


def marker_attention(record: AttentionRecord, markers, video: int = 0,
                     layer: int = 0) -> tuple[float, float]:
    """Mean [CLS] weight on marker frames and on the remaining frames (heads averaged)."""
    weights = record.cls_weights(layer)[video].mean(axis=0)[1:]
    positions = np.asarray(record.frame_positions)[video]
    is_marker = np.isin(positions, np.asarray(markers))
    if not is_marker.any() or is_marker.all():
        raise ValueError("need both marker and non-marker frames in the sequence")
    return float(weights[is_marker].mean()), float(weights[~is_marker].mean())
