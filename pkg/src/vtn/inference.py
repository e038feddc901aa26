"""Inference protocols: full video, multi-view, chunked, precomputed features."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import records
from .data import (Video, center_crop, footprint_frames, resize_shorter_side, round_half_up,
                   three_crops, uniform_indices)
from .encoder import AttentionRecord
from .model import VTN, softmax_np
from .tensor import Tensor, no_grad


@dataclass
class FullVideo:
    target_frames: int = 250


@dataclass
class MultiView:
    num_clips: int = 10
    num_crops: int = 3
    frames_per_view: int = 16
    footprint_seconds: float = 2.56

    @property
    def num_views(self) -> int:
        return self.num_clips * self.num_crops


@dataclass
class Chunked:
    chunk_size: int
    target_frames: int = 250


@dataclass
class PrecomputedFeatures:
    feature_source: Optional[str] = None
    target_frames: int = 250


InferenceProtocol = Union[FullVideo, MultiView, Chunked, PrecomputedFeatures]


def eval_resize(frame_size: int) -> int:
    """Shorter-side resize for evaluation, keeping the 256 -> 224 crop ratio."""
    return int(round_half_up(frame_size * 256 / 224))


def align_indices(num_frames: int, target: int) -> np.ndarray:
    """Sub- or up-sample ``num_frames`` source frames to ``target`` indices."""
    if num_frames < 1:
        raise ValueError("cannot align an empty video")
    return uniform_indices(num_frames, target)


def aligned_frames(video: Video, target: int, frame_size: int,
                   resize: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Frames aligned to ``target`` and center-cropped; returns (frames, positions)."""
    positions = align_indices(video.num_frames, target)
    frames = resize_shorter_side(video.frames[positions], resize or eval_resize(frame_size))
    return center_crop(frames, frame_size), positions


def _forward(model: VTN, frames: np.ndarray, positions: np.ndarray):
    model.eval()
    with no_grad():
        logits, record = model(frames, positions)
    return logits.data, record


def full_video_inference(video: Video, model: VTN, target_frames: int = 250,
                         resize: Optional[int] = None,
                         shuffle_rng: Optional[np.random.Generator] = None
                         ) -> tuple[np.ndarray, AttentionRecord]:
    frames, positions = aligned_frames(video, target_frames, model.cfg.frame_size, resize)
    if shuffle_rng is not None:
        frames = frames[shuffle_rng.permutation(len(frames))]
    logits, record = _forward(model, frames[None], positions[None])
    return softmax_np(logits[0]), record


def full_video_probs(videos: list[Video], model: VTN, target_frames: int = 250,
                     resize: Optional[int] = None, batch_size: int = 64,
                     shuffle_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Batched full-video inference over many videos -> (V, classes) probabilities."""
    out = []
    for lo in range(0, len(videos), batch_size):
        chunk = videos[lo:lo + batch_size]
        frames, positions = [], []
        for v in chunk:
            f, p = aligned_frames(v, target_frames, model.cfg.frame_size, resize)
            if shuffle_rng is not None:
                f = f[shuffle_rng.permutation(len(f))]
            frames.append(f)
            positions.append(p)
        logits, _ = _forward(model, np.stack(frames), np.stack(positions))
        out.append(softmax_np(logits))
    return np.concatenate(out, axis=0)


def view_windows(num_frames: int, fps: float, proto: MultiView) -> list[np.ndarray]:
    """Frame indices of each temporal clip, centred at (c + 0.5) / num_clips."""
    window = min(footprint_frames(proto.footprint_seconds, fps), num_frames)
    out = []
    for c in range(proto.num_clips):
        centre = (c + 0.5) / proto.num_clips * num_frames
        start = int(round_half_up(centre - window / 2))
        start = min(max(start, 0), num_frames - window)
        out.append(start + uniform_indices(window, proto.frames_per_view))
    return out


def multi_view_inference(video: Video, model: VTN, proto: MultiView,
                         resize: Optional[int] = None) -> np.ndarray:
    """Mean of per-view softmax scores over clips x crops."""
    if video.num_frames < 1:
        raise ValueError("cannot run inference on an empty video")
    size = model.cfg.frame_size
    views, positions = [], []
    for idx in view_windows(video.num_frames, video.fps, proto):
        frames = resize_shorter_side(video.frames[idx], resize or eval_resize(size))
        for view in three_crops(frames, size, proto.num_crops):
            views.append(view)
            positions.append(idx)
    logits, _ = _forward(model, np.stack(views), np.stack(positions))
    return softmax_np(logits).mean(axis=0)


def chunked_features(frames: np.ndarray, model: VTN, chunk_size: int) -> np.ndarray:
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    model.eval()
    parts = []
    with no_grad():
        for lo in range(0, len(frames), chunk_size):
            parts.append(model.features(frames[None, lo:lo + chunk_size]).data[0])
    return np.concatenate(parts, axis=0)


def chunked_inference(video: Video, model: VTN, chunk_size: int, target_frames: int = 250,
                      resize: Optional[int] = None) -> np.ndarray:
    """Backbone over chunks of frames, then one encoder pass over all features."""
    frames, positions = aligned_frames(video, target_frames, model.cfg.frame_size, resize)
    feats = chunked_features(frames, model, chunk_size)
    return precomputed_feature_inference(feats, positions, model)


def extract_video_features(video: Video, model: VTN, target_frames: int = 250,
                           resize: Optional[int] = None,
                           chunk_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    frames, positions = aligned_frames(video, target_frames, model.cfg.frame_size, resize)
    return chunked_features(frames, model, chunk_size), positions


def precomputed_feature_inference(features, positions, model: VTN) -> np.ndarray:
    """Encoder and head only, over (F, d) features from the same backbone."""
    feats = features.data if isinstance(features, Tensor) else np.asarray(features)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError(f"expected non-empty (F, d) features, got shape {feats.shape}")
    if feats.shape[1] != model.cfg.d_model:
        raise ValueError(f"feature width {feats.shape[1]} does not match encoder width "
                         f"{model.cfg.d_model}")
    model.eval()
    with no_grad():
        logits, _ = model.classify_features(feats[None].astype(model.dtype),
                                            np.asarray(positions)[None])
    return softmax_np(logits.data[0])


# ------------------------------------------------------------ feature files
def write_features(directory, items: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    """Write ``{video_id: (features, positions)}`` as record files plus ``positions.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "positions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "slot", "frame_position"])
        for vid, (feats, positions) in items.items():
            records.write(directory / f"{vid}.vtr", {"features": np.asarray(feats)}, {"id": vid})
            for slot, pos in enumerate(np.asarray(positions)):
                writer.writerow([vid, slot, int(pos)])


def read_features(directory) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    directory = Path(directory)
    positions: dict[str, list[tuple[int, int]]] = {}
    with open(directory / "positions.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            positions.setdefault(row["id"], []).append((int(row["slot"]), int(row["frame_position"])))
    out = {}
    for vid, slots in positions.items():
        tensors, _ = records.read(directory / f"{vid}.vtr")
        pos = np.array([p for _, p in sorted(slots)], dtype=np.int64)
        out[vid] = (tensors["features"], pos)
    return out


def protocol_from_config(infer) -> InferenceProtocol:
    if infer.protocol == "full":
        return FullVideo(infer.full_video_frames)
    if infer.protocol == "multiview":
        return MultiView(infer.num_clips, infer.num_crops, infer.frames_per_view,
                         infer.footprint_seconds)
    if infer.protocol == "chunked":
        return Chunked(infer.chunk_size, infer.full_video_frames)
    if infer.protocol == "features":
        return PrecomputedFeatures(None, infer.full_video_frames)
    raise ValueError(f"unknown protocol {infer.protocol!r}")


def predict(video: Video, model: VTN, proto: InferenceProtocol, resize: Optional[int] = None,
            shuffle_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Class probabilities for one video under ``proto``."""
    if isinstance(proto, FullVideo):
        return full_video_inference(video, model, proto.target_frames, resize, shuffle_rng)[0]
    if shuffle_rng is not None:
        raise ValueError("shuffled evaluation is defined for the full-video protocol")
    if isinstance(proto, MultiView):
        return multi_view_inference(video, model, proto, resize)
    if isinstance(proto, Chunked):
        return chunked_inference(video, model, proto.chunk_size, proto.target_frames, resize)
    if isinstance(proto, PrecomputedFeatures):
        feats, positions = extract_video_features(video, model, proto.target_frames, resize)
        return precomputed_feature_inference(feats, positions, model)
    raise TypeError(f"unknown protocol {proto!r}")
