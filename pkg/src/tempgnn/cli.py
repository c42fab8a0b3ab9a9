"""Command line entry point: ``python3 -m tempgnn <command>``.

Commands print one JSON object per line, except ``schedule-dump`` whose
default output is plain ``e_s,e_e`` lines.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import bench_sampler, sampling_preset
from .config import ModelConfig
from .data import load_dataset_dir, planted_dataset, random_dataset, wikipedia_like
from .errors import TemporalGraphError
from .sched import make_epoch_schedule
from .trainer import Trainer, jsonl_logger, trainer_from_checkpoint

WIKIPEDIA_TRAIN_EDGES = 110_232  # 70% of 157,474


def _emit(out, record):
    out.write(json.dumps(record, sort_keys=True) + "\n")
    out.flush()


def cmd_train(args, out):
    cfg = ModelConfig.load(args.config)
    overrides = {"seed": args.seed, "threads": args.threads}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = cfg.with_train(**overrides)
    ds = load_dataset_dir(args.data, random_edge_features=args.random_edge_features, seed=args.seed)
    _emit(out, {"event": "dataset", **ds.stats()})
    ckpt = Path(args.out) if args.out else Path(args.data) / f"{cfg.name}.ckpt"
    with Trainer(cfg, ds, log=jsonl_logger(out)) as tr:
        tr.fit()
        tr.save_checkpoint(ckpt)
        _emit(out, {"event": "checkpoint", "path": str(ckpt)})
        if args.test:
            rep = tr.evaluate(test=True)
            _emit(out, {"event": "eval", **rep.__dict__})
    return 0


def cmd_eval(args, out):
    ds = load_dataset_dir(args.data, random_edge_features=args.random_edge_features, seed=args.seed)
    with trainer_from_checkpoint(args.ckpt, ds, seed=args.seed, threads=args.threads) as tr:
        rep = tr.evaluate(test=True)
    _emit(out, {"event": "eval", **rep.__dict__})
    return 0


def cmd_bench(args, out):
    threads = [int(x) for x in args.threads.split(",") if x.strip()]
    ds = load_dataset_dir(args.data)
    _emit(out, {"event": "dataset", **ds.stats()})
    for row in bench_sampler(ds, sampling_preset(args.sampling), threads, args.batch_size):
        _emit(out, {"event": "bench", "sampling": args.sampling, **row.as_dict()})
    return 0


def cmd_schedule_dump(args, out):
    n = args.num_edges
    if args.data:
        n = load_dataset_dir(args.data).split.train_end
    rng = np.random.default_rng(args.seed)
    for epoch in range(args.epochs):
        s = make_epoch_schedule(n, args.bs, args.cs, rng)
        if args.format == "jsonl":
            _emit(out, {"event": "schedule", "epoch": epoch, "offset": s.epoch_start_offset,
                        "batches": [list(b) for b in s.batches]})
        else:
            out.write(f"# epoch {epoch} offset {s.epoch_start_offset}\n")
            out.write(s.dumps())
    return 0


def cmd_synth(args, out):
    kind = args.kind
    if kind == "planted":
        ds = planted_dataset(n_events=args.events or 50_000, seed=args.seed)
    elif kind == "random":
        ds = random_dataset(n_events=args.events or 1_000_000, seed=args.seed)
    else:
        ds = wikipedia_like(seed=args.seed)
    ds.save(args.out)
    _emit(out, {"event": "dataset", "path": args.out, **ds.stats()})
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tempgnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="dataset directory containing edges.csv")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    t.add_argument("--out", default=None, help="checkpoint path")
    t.add_argument("--test", action="store_true", help="also report test AP after training")
    t.add_argument("--random-edge-features", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with the reset-and-replay protocol")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--random-edge-features", action="store_true")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="time one epoch of sampling per thread count")
    b.add_argument("--data", required=True)
    b.add_argument("--threads", default="1")
    b.add_argument("--sampling", choices=("dysat", "tgat", "tgn"), default="tgat")
    b.add_argument("--batch-size", type=int, default=600)
    b.set_defaults(fn=cmd_bench)

    s = sub.add_parser("schedule-dump", help="print random chunk schedules")
    s.add_argument("--bs", type=int, required=True)
    s.add_argument("--cs", type=int, required=True)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--num-edges", type=int, default=WIKIPEDIA_TRAIN_EDGES)
    s.add_argument("--data", default=None, help="take the training edge count from a dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("text", "jsonl"), default="text",
                   help="text: one 'e_s,e_e' line per batch under a '# epoch' header")
    s.set_defaults(fn=cmd_schedule_dump)

    g = sub.add_parser("synth", help="write a synthetic dataset directory")
    g.add_argument("--kind", choices=("planted", "random", "wikipedia"), default="planted")
    g.add_argument("--out", required=True)
    g.add_argument("--events", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_synth)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args, out)
    except (TemporalGraphError, OSError) as exc:
        _emit(sys.stderr, {"event": "error", "type": type(exc).__name__, "message": str(exc)})
        return 2
