"""Named ablation sweeps on the synthetic tasks, each emitting one CSV.

Runs are sequential and each builds its model from ``cfg.model.init_seed``
and trains with ``cfg.train.seed``, so a sweep's CSV is reproducible.
"""

from __future__ import annotations

import copy
from typing import Callable, Optional

from .config import RunConfig
from .data import generate_synth_dataset
from .inference import FullVideo
from .model import VTN
from .training import TrainLog, evaluate, train

Progress = Optional[Callable[[str], None]]


def _train_run(cfg: RunConfig):
    cfg.validate()
    train_videos, val_videos = generate_synth_dataset(cfg.data)
    model, log = train(VTN(cfg.model), train_videos, val_videos, cfg.train, cfg.infer)
    return model, log, val_videos


def _variant(cfg: RunConfig, **sections) -> RunConfig:
    out = copy.deepcopy(cfg)
    for section, values in sections.items():
        for key, value in values.items():
            setattr(getattr(out, section), key, value)
    out.model.num_classes = out.data.num_classes
    return out


def _task(cfg: RunConfig, task: str) -> dict:
    return {"task": task, "num_classes": 2 if task == "order" else max(cfg.data.num_classes, 4)}


def _csv(header: tuple, rows: list[tuple]) -> str:
    def fmt(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)
    return "\n".join([",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]) + "\n"


def _final(log: TrainLog) -> tuple[float, float]:
    return log.val_top1[-1], max(log.val_top1)


def _say(progress: Progress, text: str) -> None:
    if progress is not None:
        progress(text)


def sweep_depth(cfg: RunConfig, progress: Progress = None) -> str:
    """Encoder depth on the order task."""
    rows = []
    for layers in (1, 3, 6, 12):
        run = _variant(cfg, data=_task(cfg, "order"), model={"num_layers": layers})
        _, log, _ = _train_run(run)
        rows.append((layers, *_final(log)))
        _say(progress, f"table2 layers={layers} val_top1={rows[-1][1]:.4f}")
    return _csv(("num_layers", "val_top1", "best_val_top1"), rows)


def sweep_pe_shuffle(cfg: RunConfig, progress: Progress = None) -> str:
    """Positional-embedding mode x shuffled evaluation, on both tasks."""
    rows = []
    for task in ("order", "presence"):
        for pe in ("learned", "sinusoidal", "none"):
            run = _variant(cfg, data=_task(cfg, task), model={"pe_mode": pe})
            model, log, val = _train_run(run)
            proto = FullVideo(run.infer.full_video_frames)
            plain = evaluate(model, val, proto).top1
            shuffled = evaluate(model, val, proto, shuffle=True, seed=run.train.seed).top1
            rows.append((task, pe, plain, shuffled, shuffled - plain))
            _say(progress, f"table3 task={task} pe={pe} top1={plain:.4f} shuffled={shuffled:.4f}")
    return _csv(("task", "pe_mode", "val_top1", "shuffled_top1", "delta"), rows)


def sweep_footprint(cfg: RunConfig, progress: Progress = None) -> str:
    """Training-clip temporal footprint x clip length on long order videos."""
    rows = []
    fps = cfg.data.fps
    long_video = max(cfg.data.frames_per_video, int(10.0 * fps) + 1)
    for frames in (16, 32):
        for seconds in (2.56, 5.12, 10.0):
            run = _variant(cfg, data={**_task(cfg, "order"), "frames_per_video": long_video},
                           train={"footprint_seconds": seconds, "frames_per_clip": frames},
                           infer={"full_video_frames": frames})
            _, log, _ = _train_run(run)
            rows.append((seconds, frames, *_final(log)))
            _say(progress, f"table4 footprint={seconds} frames={frames} val_top1={rows[-1][2]:.4f}")
    return _csv(("footprint_seconds", "frames_per_clip", "val_top1", "best_val_top1"), rows)


def sweep_frozen(cfg: RunConfig, progress: Progress = None) -> str:
    """Frozen versus fine-tuned backbone on the order task."""
    rows = []
    for frozen in (False, True):
        run = _variant(cfg, data=_task(cfg, "order"), train={"frozen_backbone": frozen})
        _, log, _ = _train_run(run)
        rows.append(("frozen" if frozen else "finetuned", *_final(log)))
        _say(progress, f"table5 backbone={rows[-1][0]} val_top1={rows[-1][1]:.4f}")
    return _csv(("backbone", "val_top1", "best_val_top1"), rows)


def sweep_attention(cfg: RunConfig, progress: Progress = None) -> str:
    """Per-epoch validation curves for learned versus uniform attention."""
    rows = []
    for mode in ("learned", "uniform"):
        run = _variant(cfg, data=_task(cfg, "order"), model={"attention_mode": mode})
        _, log, _ = _train_run(run)
        rows += [(mode, r.epoch, r.train_loss, r.val_top1) for r in log.records]
        _say(progress, f"fig5 attention={mode} final val_top1={log.val_top1[-1]:.4f}")
    return _csv(("attention_mode", "epoch", "train_loss", "val_top1"), rows)


SWEEPS: dict[str, Callable[[RunConfig, Progress], str]] = {
    "table2": sweep_depth,
    "table3": sweep_pe_shuffle,
    "table4": sweep_footprint,
    "table5": sweep_frozen,
    "fig5": sweep_attention,
}


def run_sweep(name: str, cfg: RunConfig, progress: Progress = None) -> str:
    if name not in SWEEPS:
        raise KeyError(f"unknown sweep {name!r}; choose from {', '.join(SWEEPS)}")
    return SWEEPS[name](cfg, progress)
