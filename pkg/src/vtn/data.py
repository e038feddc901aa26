"""Synthetic glyph videos, clip sampling, clip-level augmentation.

Two tasks:

* ``order``: glyphs A and B each occupy a run of ``marker_span`` frames; label 0
  iff A's run comes first.
* ``presence``: one class glyph occupies a run of frames; label is its identity.

Non-marker frames may carry distractor glyphs drawn from a separate set, and
every pixel gets Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from skimage.transform import resize as _sk_resize

from .config import SynthTaskSpec
from .nn import rng_from

NUM_DISTRACTORS = 6
GRATING_PERIODS = (3.0, 5.0)


@dataclass
class Video:
    frames: np.ndarray  # (T, C, H, W)
    fps: float
    label: int
    id: str
    markers: tuple = ()  # frames holding class glyphs, when known

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class VideoClip:
    frames: np.ndarray  # (N, C, H, W)
    frame_positions: np.ndarray  # (N,) indices into the source video
    label: int


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def uniform_indices(length: int, count: int) -> np.ndarray:
    """``count`` endpoint-inclusive indices into ``range(length)``: round(i*(length-1)/(count-1))."""
    if length < 1 or count < 1:
        raise ValueError("uniform_indices needs length >= 1 and count >= 1")
    if count == 1:
        return np.zeros(1, dtype=np.int64)
    return round_half_up(np.arange(count) * (length - 1) / (count - 1))


def footprint_frames(footprint_seconds: float, fps: float) -> int:
    n = int(round_half_up(footprint_seconds * fps))
    if n < 1:
        raise ValueError(f"footprint of {footprint_seconds}s at {fps} fps covers no frame")
    return n


def sample_training_clip(video: Video, footprint_seconds: float, num_frames: int,
                         rng: np.random.Generator) -> VideoClip:
    """Random-start window of ``footprint_seconds``, subsampled to ``num_frames``."""
    total = video.num_frames
    if total < 1:
        raise ValueError("cannot sample a clip from an empty video")
    window = min(footprint_frames(footprint_seconds, video.fps), total)
    start = int(rng.integers(0, total - window + 1))
    positions = start + uniform_indices(window, num_frames)
    return VideoClip(video.frames[positions], positions, video.label)


def resize_shorter_side(frames: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of (N, C, H, W) so that min(H, W) == size."""
    n, c, h, w = frames.shape
    if min(h, w) == size:
        return frames
    if h <= w:
        out_h, out_w = size, int(round_half_up(w * size / h))
    else:
        out_h, out_w = int(round_half_up(h * size / w)), size
    flat = frames.reshape(n * c, h, w)
    out = _sk_resize(flat, (n * c, out_h, out_w), order=1, mode="edge",
                     anti_aliasing=False, preserve_range=True)
    return out.reshape(n, c, out_h, out_w).astype(frames.dtype)


def crop(frames: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    h, w = frames.shape[-2:]
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than frame {h}x{w}")
    return np.ascontiguousarray(frames[..., top:top + size, left:left + size])


def center_crop(frames: np.ndarray, size: int) -> np.ndarray:
    h, w = frames.shape[-2:]
    return crop(frames, (h - size) // 2, (w - size) // 2, size)


def three_crops(frames: np.ndarray, size: int, count: int = 3) -> list[np.ndarray]:
    """Crops spread from one end of the longer spatial axis to the other."""
    h, w = frames.shape[-2:]
    if count == 1:
        return [center_crop(frames, size)]
    along_w = w >= h
    span = (w if along_w else h) - size
    if span < 0:
        raise ValueError(f"crop {size} larger than frame {h}x{w}")
    other = ((h if along_w else w) - size) // 2
    offsets = round_half_up(np.arange(count) * span / (count - 1))
    out = []
    for off in offsets:
        top, left = (other, int(off)) if along_w else (int(off), other)
        out.append(crop(frames, top, left, size))
    return out


def hflip(frames: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(frames[..., ::-1])


def augment_clip(clip: VideoClip, scale_range: tuple[int, int], crop_size: int, hflip_prob: float,
                 rng: np.random.Generator) -> VideoClip:
    """One scale, one crop offset and one flip decision shared by every frame."""
    scale = int(rng.integers(scale_range[0], scale_range[1] + 1))
    frames = resize_shorter_side(clip.frames, scale)
    h, w = frames.shape[-2:]
    if crop_size > h or crop_size > w:
        raise ValueError(f"crop {crop_size} larger than resized frame {h}x{w}")
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    frames = crop(frames, top, left, crop_size)
    if rng.random() < hflip_prob:
        frames = hflip(frames)
    return replace(clip, frames=frames)


def shuffle_eval_transform(clip: VideoClip, rng: np.random.Generator) -> VideoClip:
    """Permute frame order while positions keep their slot order.

    Positional embeddings are added after shuffling, so slot ``k`` keeps the
    ``k``-th original position while receiving a different frame.
    """
    perm = rng.permutation(clip.frames.shape[0])
    return VideoClip(clip.frames[perm], clip.frame_positions.copy(), clip.label)


# --------------------------------------------------------------------- synth
def glyph_inventory(spec: SynthTaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Class glyphs and distractor glyphs, a pure function of the seed.

    Each glyph is a binarized chevron grating with its own (angle, period)
    pair. Gratings are built from the distance to the vertical midline, so
    every glyph is its own mirror image and horizontal flips keep labels.
    """
    rng = rng_from(spec.seed, stream=1)
    n_cls = max(spec.num_classes, 2)
    total = n_cls + NUM_DISTRACTORS
    n_angle = -(-total // len(GRATING_PERIODS))
    combos = [(k * (np.pi / 2) / max(n_angle - 1, 1), period)
              for period in GRATING_PERIODS for k in range(n_angle)]
    g = spec.glyph_size
    yy, xx = np.mgrid[0:g, 0:g] + 0.5
    xx = np.abs(xx - g / 2)
    glyphs = []
    for i in rng.permutation(len(combos))[:total]:
        theta, period = combos[i]
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = np.cos(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        glyphs.append((wave > 0).astype(np.float32))
    stack = np.stack(glyphs)
    return stack[:n_cls], stack[n_cls:]


def _place(frame: np.ndarray, glyph: np.ndarray, rng: np.random.Generator) -> None:
    size = frame.shape[-1]
    g = glyph.shape[-1]
    centre = (size - g) // 2
    jitter = max(0, min(3, centre))
    top = centre + int(rng.integers(-jitter, jitter + 1))
    left = centre + int(rng.integers(-jitter, jitter + 1))
    frame[:, top:top + g, left:left + g] = np.maximum(frame[:, top:top + g, left:left + g], glyph)


def _make_video(spec: SynthTaskSpec, classes: np.ndarray, distractors: np.ndarray,
                rng: np.random.Generator, vid: str) -> Video:
    t, c, s = spec.frames_per_video, spec.channels, spec.frame_size
    frames = np.zeros((t, c, s, s), dtype=np.float32)
    span = spec.marker_span
    if spec.task == "order":
        while True:
            ta, tb = rng.choice(t - span + 1, size=2, replace=False)
            if abs(int(ta) - int(tb)) >= span:
                break
        label = 0 if ta < tb else 1
        markers = {int(ta) + k: classes[0] for k in range(span)}
        markers.update({int(tb) + k: classes[1] for k in range(span)})
    else:
        label = int(rng.integers(0, spec.num_classes))
        start = int(rng.integers(0, t - span + 1))
        markers = {start + k: classes[label] for k in range(span)}
    for i in range(t):
        if i in markers:
            _place(frames[i], markers[i], rng)
        elif rng.random() < spec.distractor_prob:
            _place(frames[i], distractors[int(rng.integers(0, len(distractors)))], rng)
    if spec.noise > 0:
        frames += rng.normal(0.0, spec.noise, size=frames.shape).astype(np.float32)
    return Video(frames, spec.fps, label, vid, tuple(sorted(markers)))


def generate_synth_dataset(spec: SynthTaskSpec) -> tuple[list[Video], list[Video]]:
    """Deterministic train/val split for ``spec``."""
    spec.validate()
    classes, distractors = glyph_inventory(spec)
    train_rng, val_rng = rng_from(spec.seed, stream=2), rng_from(spec.seed, stream=3)
    train = [_make_video(spec, classes, distractors, train_rng, f"train_{i:05d}")
             for i in range(spec.num_train)]
    val = [_make_video(spec, classes, distractors, val_rng, f"val_{i:05d}")
           for i in range(spec.num_val)]
    return train, val


def class_counts(videos: list[Video], num_classes: int) -> np.ndarray:
    return np.bincount([v.label for v in videos], minlength=num_classes)


def stream_rng(seed: Optional[int], stream: int) -> np.random.Generator:
    return rng_from(seed, stream)
