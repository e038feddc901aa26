"""Command-line entry point: ``vtn <subcommand> ...``.

Errors print one line ``error: <kind>: <message>`` to stderr and exit
nonzero. Outputs default to ``$VTN_OUTPUT_DIR`` (or ``./vtn_out``).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    """Expected failure with a one-line message."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one line instead of usage + message
        raise CliError("usage", message.replace("\n", " "))


def output_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get("VTN_OUTPUT_DIR") or "vtn_out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_config(args) -> C.RunConfig:
    cfg = C.load(args.config) if getattr(args, "config", None) else C.RunConfig()
    items = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError("config", f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        items[key.strip()] = value
    C.apply_overrides(cfg, items)
    cfg.model.num_classes = cfg.data.num_classes if "model.num_classes" not in items \
        else cfg.model.num_classes
    cfg.validate()
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config file (section.field=value lines)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field, e.g. model.num_layers=2")


def _protocol(name: str, infer: C.InferenceConfig, args=None):
    from .inference import protocol_from_config
    infer = replace(infer, protocol=name)
    if args is not None:
        if getattr(args, "chunk_size", None):
            infer.chunk_size = args.chunk_size
        if getattr(args, "views", None):
            infer.num_clips = max(1, args.views // infer.num_crops)
            if infer.num_clips * infer.num_crops != args.views:
                raise CliError("config", f"--views {args.views} is not a multiple of "
                                         f"{infer.num_crops} crops")
    return protocol_from_config(infer)


# ------------------------------------------------------------------ commands
def cmd_gen_data(args) -> int:
    from .data import generate_synth_dataset
    from .dataset import write_dataset
    cfg = _run_config(args)
    out = output_dir(args.out)
    train, val = generate_synth_dataset(cfg.data)
    write_dataset(train, val, out)
    (out / "config.txt").write_text(C.serialize(cfg))
    print(f"wrote {len(train)} train and {len(val)} val videos to {out}")
    return 0


def _load_split(data_dir, split: str):
    from .dataset import read_split
    path = Path(data_dir) / split
    if not (path / "index.csv").is_file():
        raise CliError("missing-file", f"no dataset split at {path}")
    return read_split(path)


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .data import generate_synth_dataset
    from .model import VTN
    from .training import train
    cfg = _run_config(args)
    out = output_dir(args.out)
    if args.data:
        train_videos, val_videos = _load_split(args.data, "train"), _load_split(args.data, "val")
    else:
        train_videos, val_videos = generate_synth_dataset(cfg.data)

    def progress(rec):
        if not args.quiet:
            print(f"epoch {rec.epoch} loss {rec.train_loss:.4f} train_top1 {rec.train_top1:.3f} "
                  f"val_top1 {rec.val_top1:.3f}", flush=True)

    model, log = train(VTN(cfg.model), train_videos, val_videos, cfg.train, cfg.infer, progress)
    save_checkpoint(model, out / "checkpoint.vtr")
    log.write_csv(out / "trainlog.csv")
    (out / "config.txt").write_text(C.serialize(cfg))
    print(f"wrote {out / 'checkpoint.vtr'} and {out / 'trainlog.csv'}")
    return 0


def _load_model(path):
    from .checkpoint import load_checkpoint
    if not Path(path).is_file():
        raise CliError("missing-file", f"no checkpoint at {path}")
    return load_checkpoint(path)


def cmd_eval(args) -> int:
    from .inference import PrecomputedFeatures, precomputed_feature_inference, read_features
    from .training import evaluate, topk_accuracy
    model = _load_model(args.checkpoint)
    videos = _load_split(args.data, args.split)
    infer = C.InferenceConfig()
    infer.full_video_frames = args.frames or infer.full_video_frames
    proto = _protocol(args.protocol, infer, args)
    if args.shuffle and args.protocol != "full":
        raise CliError("usage", "--shuffle is defined for --protocol full")
    if isinstance(proto, PrecomputedFeatures) and args.features:
        feats = read_features(args.features)
        missing = [v.id for v in videos if v.id not in feats]
        if missing:
            raise CliError("missing-file", f"no features for video {missing[0]!r}")
        probs = np.stack([precomputed_feature_inference(*feats[v.id], model) for v in videos])
        labels = [v.label for v in videos]
        top1, top5 = topk_accuracy(probs, labels, 1), topk_accuracy(probs, labels, 5)
    else:
        res = evaluate(model, videos, proto, shuffle=args.shuffle, seed=args.seed)
        top1, top5 = res.top1, res.top5
    print(f"protocol={args.protocol} shuffle={str(args.shuffle).lower()} videos={len(videos)} "
          f"top1={top1:.6f} top5={top5:.6f}")
    return 0


def cmd_extract_features(args) -> int:
    from .inference import extract_video_features, write_features
    model = _load_model(args.checkpoint)
    videos = _load_split(args.data, args.split)
    target = args.frames or C.InferenceConfig().full_video_frames
    items = {v.id: extract_video_features(v, model, target) for v in videos}
    out = output_dir(args.out)
    write_features(out, items)
    print(f"wrote features for {len(items)} videos to {out}")
    return 0


def cmd_flops(args) -> int:
    from .flops import HEADER, count_flops
    cfg = _run_config(args)
    if args.compare:
        full = count_flops(cfg.model, _protocol("full", cfg.infer, args))
        multi = count_flops(cfg.model, _protocol("multiview", cfg.infer, args))
        print(HEADER)
        print("protocol,views,per_view,total")
        print(f"full,{full.num_views},{full.per_view},{full.total}")
        print(f"multiview,{multi.num_views},{multi.per_view},{multi.total}")
        print(f"ratio_multiview_over_full,{multi.total / full.total:.6f}")
        return 0
    report = count_flops(cfg.model, _protocol(args.protocol, cfg.infer, args))
    text = report.to_csv() if args.csv else report.to_table()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_bench_attn(args) -> int:
    from .flops import attention_term
    try:
        ns = [int(x) for x in args.n_list.split(",") if x.strip()]
    except ValueError:
        raise CliError("usage", f"--n-list must be comma-separated integers, got {args.n_list!r}")
    if not ns or min(ns) < 1:
        raise CliError("usage", "--n-list needs positive sequence lengths")
    print("n,window,windowed,dense,windowed_ratio,dense_ratio")
    prev = None
    for n in ns:
        win = attention_term(n, args.d, args.window)
        dense = attention_term(n, args.d, None)
        ratios = ("", "") if prev is None else (f"{win / prev[0]:.4f}", f"{dense / prev[1]:.4f}")
        print(f"{n},{args.window},{win},{dense},{ratios[0]},{ratios[1]}")
        prev = (win, dense)
    return 0


def cmd_inspect_attn(args) -> int:
    from .analysis import export_attention
    from .dataset import find_video
    from .inference import full_video_inference
    model = _load_model(args.checkpoint)
    videos = _load_split(args.data, args.split)
    try:
        video = find_video(videos, args.video_id)
    except KeyError as exc:
        raise CliError("missing-video", str(exc.args[0]))
    target = args.frames or C.InferenceConfig().full_video_frames
    _, record = full_video_inference(video, model, target)
    path = Path(args.out) if args.out else output_dir(None) / f"attention_{video.id}.csv"
    rows = export_attention(record, path)
    print(f"wrote {rows} rows to {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import module_sweep
    results = module_sweep(seed=args.seed, tolerance=args.tolerance)
    print("module,max_rel_error,checked,passed")
    for name, rep in results:
        print(f"{name},{rep.max_rel_error:.3e},{rep.num_checked},{str(rep.passed).lower()}")
    failed = [n for n, r in results if not r.passed]
    if failed:
        raise CliError("gradcheck", f"{len(failed)} module(s) above tolerance: {','.join(failed)}")
    return 0


def cmd_ablate(args) -> int:
    from .ablate import SWEEPS, run_sweep
    cfg = _run_config(args)
    if args.epochs:
        cfg.train.epochs = args.epochs
    out = output_dir(args.out)
    names = list(SWEEPS) if args.sweep == "all" else [args.sweep]
    for name in names:
        path = out / f"{name}.csv"
        rows = run_sweep(name, cfg, progress=None if args.quiet else print)
        path.write_text(rows)
        print(f"wrote {path}")
    return 0


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    from .ablate import SWEEPS
    p = _Parser(prog="vtn", description="Video transformer network at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset on disk")
    _add_config_args(g)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model; writes checkpoint.vtr and trainlog.csv")
    _add_config_args(t)
    t.add_argument("--data", help="dataset directory from gen-data (default: generate in memory)")
    t.add_argument("--out")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--protocol", choices=C.PROTOCOLS, default="full")
    e.add_argument("--shuffle", action="store_true", help="shuffle frames before adding PE")
    e.add_argument("--frames", type=int, help="full-video frame count F")
    e.add_argument("--chunk-size", type=int)
    e.add_argument("--views", type=int, help="multi-view count (multiple of the crop count)")
    e.add_argument("--features", help="directory from extract-features (protocol features)")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extract-features", help="write per-video backbone features")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--split", default="val")
    x.add_argument("--frames", type=int)
    x.add_argument("--out")
    x.set_defaults(func=cmd_extract_features)

    f = sub.add_parser("flops", help="analytic inference cost")
    _add_config_args(f)
    f.add_argument("--protocol", choices=C.PROTOCOLS, default="full")
    f.add_argument("--views", type=int)
    f.add_argument("--compare", action="store_true", help="full video vs multi-view totals")
    f.add_argument("--csv", action="store_true")
    f.add_argument("--out")
    f.set_defaults(func=cmd_flops)

    b = sub.add_parser("bench-attn", help="windowed vs dense attention-term counts")
    b.add_argument("--n-list", default="64,128,256")
    b.add_argument("--window", type=int, default=8)
    b.add_argument("--d", type=int, default=32)
    b.set_defaults(func=cmd_bench_attn)

    i = sub.add_parser("inspect-attn", help="export [CLS] attention weights as CSV")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="val")
    i.add_argument("--video-id", required=True)
    i.add_argument("--frames", type=int)
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect_attn)

    c = sub.add_parser("gradcheck", help="finite-difference check of every module")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="run a named sweep and write its CSV")
    _add_config_args(a)
    a.add_argument("sweep", choices=[*SWEEPS, "all"])
    a.add_argument("--epochs", type=int)
    a.add_argument("--out")
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.kind == "usage" else EXIT_FAILURE
    except C.ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, KeyError, OSError) as exc:
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"error: {type(exc).__name__}: {msg}".replace("\n", " "), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
