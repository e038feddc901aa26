"""Training loop (SGD by default, Adam optional) and top-k evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import ops
from .config import InferenceConfig, TrainConfig
from .data import Video, augment_clip, sample_training_clip
from .inference import (FullVideo, InferenceProtocol, full_video_probs, predict,
                        protocol_from_config)
from .model import VTN
from .nn import rng_from
from .tensor import NonFiniteError, backward

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "train_top1", "val_top1", "val_top5")


class TrainingDiverged(NonFiniteError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_top1: float
    val_top1: float
    val_top5: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(LOG_FIELDS)]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss:.8f},{r.train_top1:.6f},"
                         f"{r.val_top1:.6f},{r.val_top5:.6f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @property
    def val_top1(self) -> list[float]:
        return [r.val_top1 for r in self.records]


def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Scheduled learning rate; both schedules return ``cfg.lr`` at step 0."""
    if cfg.schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / max(total_steps, 1)))
    drops = sum(step >= int(m * total_steps) for m in cfg.step_milestones)
    return cfg.lr * cfg.step_gamma ** drops


def topk_accuracy(probs: np.ndarray, labels, k: int) -> float:
    """Fraction of rows whose label is among the ``k`` highest scores (lower id wins ties)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean([lab in row for lab, row in zip(labels, order)]))


@dataclass
class EvalResult:
    top1: float
    top5: float
    probs: np.ndarray


def evaluate(model: VTN, videos: list[Video], protocol: InferenceProtocol = FullVideo(),
             shuffle: bool = False, seed: int = 0, resize: Optional[int] = None) -> EvalResult:
    """Top-1/top-5 over ``videos``; ``shuffle`` permutes frames before positions are added."""
    rng = rng_from(seed, stream=7) if shuffle else None
    if isinstance(protocol, FullVideo):
        probs = full_video_probs(videos, model, protocol.target_frames, resize, shuffle_rng=rng)
    else:
        probs = np.stack([predict(v, model, protocol, resize, shuffle_rng=rng) for v in videos])
    labels = [v.label for v in videos]
    return EvalResult(topk_accuracy(probs, labels, 1), topk_accuracy(probs, labels, 5), probs)


def _stack_batch(videos: list[Video], cfg: TrainConfig, crop: int, rng: np.random.Generator):
    frames, positions, labels = [], [], []
    for v in videos:
        clip = sample_training_clip(v, cfg.footprint_seconds, cfg.frames_per_clip, rng)
        clip = augment_clip(clip, (cfg.scale_min, cfg.scale_max), crop, cfg.hflip_prob, rng)
        frames.append(clip.frames)
        positions.append(clip.frame_positions)
        labels.append(clip.label)
    return np.stack(frames), np.stack(positions), np.asarray(labels)


class SGD:
    def __init__(self, params: list[tuple[str, object]], momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: None for name, _ in params}

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                v = self.velocity[name]
                v = g if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            p.data = (p.data - lr * g).astype(p.data.dtype, copy=False)


class Adam:
    """Adam with bias correction; weight decay is added to the gradient."""

    def __init__(self, params: list[tuple[str, object]], weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.moments = {name: None for name, _ in params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.moments[name] or (np.zeros_like(g), np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.moments[name] = (m, v)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.weight_decay)
    return SGD(params, cfg.momentum, cfg.weight_decay)


def train(model: VTN, train_videos: list[Video], val_videos: list[Video], cfg: TrainConfig,
          infer: Optional[InferenceConfig] = None, progress=None) -> tuple[VTN, TrainLog]:
    """Train ``model`` in place; returns it with the per-epoch log."""
    cfg.validate()
    infer = infer or InferenceConfig()
    model.freeze_backbone(cfg.frozen_backbone)
    params = model.trainable_parameters()
    opt = make_optimizer(params, cfg)
    rng = rng_from(cfg.seed, stream=11)
    steps_per_epoch = math.ceil(len(train_videos) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_videos))
        losses, correct, seen = [], 0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_videos[i] for i in order[lo:lo + cfg.batch_size]]
            frames, positions, labels = _stack_batch(batch, cfg, model.cfg.frame_size, rng)
            model.train()
            model.zero_grad()
            logits, _ = model(frames, positions, rng)
            loss = ops.cross_entropy(logits, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch} step {step} "
                                       f"(lr={learning_rate(cfg, step, total_steps):g})")
            backward(loss)
            opt.step(learning_rate(cfg, step, total_steps))
            step += 1
            losses.append(value * len(batch))
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            seen += len(batch)
        val = _validate(model, val_videos, cfg, infer)
        rec = EpochRecord(epoch, float(np.sum(losses) / seen), correct / seen, val.top1, val.top5)
        log.records.append(rec)
        logger.info("epoch %d loss %.4f train %.3f val %.3f", epoch, rec.train_loss,
                    rec.train_top1, rec.val_top1)
        if progress is not None:
            progress(rec)
    model.eval()
    return model, log


def _validate(model: VTN, videos: list[Video], cfg: TrainConfig, infer: InferenceConfig) -> EvalResult:
    if not videos:
        return EvalResult(float("nan"), float("nan"), np.zeros((0, model.cfg.num_classes)))
    return evaluate(model, videos, protocol_from_config(replace(infer, protocol=cfg.val_protocol)))
