"""On-disk video datasets: one directory per split.

Each split holds ``index.csv`` (``id,label,fps,T_orig``) and one record file
``<id>.vtr`` per video with a ``frames`` tensor of shape (T, C, H, W).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import records
from .data import Video

INDEX_FIELDS = ("id", "label", "fps", "T_orig")


def write_split(videos: list[Video], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_FIELDS)
        for v in videos:
            writer.writerow([v.id, v.label, repr(float(v.fps)), v.num_frames])
            records.write(directory / f"{v.id}.vtr", {"frames": v.frames},
                          {"id": v.id, "label": int(v.label), "fps": float(v.fps),
                           "markers": [int(m) for m in v.markers]})


def read_split(directory) -> list[Video]:
    directory = Path(directory)
    index = directory / "index.csv"
    if not index.is_file():
        raise FileNotFoundError(f"no index.csv in {directory}")
    videos = []
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != INDEX_FIELDS:
            raise ValueError(f"{index}: expected header {','.join(INDEX_FIELDS)}")
        for row in reader:
            tensors, meta = records.read(directory / f"{row['id']}.vtr")
            frames = tensors["frames"]
            if frames.shape[0] != int(row["T_orig"]):
                raise ValueError(f"video {row['id']!r}: index says {row['T_orig']} frames, "
                                 f"file has {frames.shape[0]}")
            videos.append(Video(frames, float(row["fps"]), int(row["label"]), row["id"],
                                tuple(meta.get("markers", ()))))
    return videos


def write_dataset(train: list[Video], val: list[Video], root) -> None:
    write_split(train, Path(root) / "train")
    write_split(val, Path(root) / "val")


def find_video(videos: list[Video], video_id: str) -> Video:
    for v in videos:
        if v.id == video_id:
            return v
    raise KeyError(f"no video with id {video_id!r}")


def frames_equal(a: list[Video], b: list[Video]) -> bool:
    return len(a) == len(b) and all(
        x.id == y.id and x.label == y.label and np.array_equal(x.frames, y.frames)
        for x, y in zip(a, b))
