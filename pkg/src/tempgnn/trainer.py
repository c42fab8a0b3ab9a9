"""Training and evaluation loops.

Sampling for batch ``b+1`` runs on a single background worker while the
model processes batch ``b``. Negatives are drawn by that same worker, in
batch order, so the random stream does not depend on timing.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from .config import ModelConfig
from .data import TemporalDataset
from .metrics import average_precision
from .models import Batch, TemporalModel
from .nn.params import load_params, save_params
from .sampler import TemporalSampler
from .sched import fixed_schedule, make_epoch_schedule, sample_negatives

_EVAL_STREAM = 0x5EED


@dataclass
class EvalReport:
    average_precision: float
    loss: float
    num_edges: int
    wall_time: float = 0.0
    sampler_time_share: float = 0.0
    test_average_precision: Optional[float] = None
    test_loss: Optional[float] = None
    state_digest: Optional[str] = None


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    val_ap: float
    epoch_time: float
    sampler_time_share: float
    num_batches: int
    schedule_offset: int


@dataclass
class PassResult:
    loss: float
    pos: np.ndarray
    neg: np.ndarray
    wall: float
    sample_wall: float
    batches: int


def state_digest(model: TemporalModel) -> str:
    """sha256 over the raw bytes of memory, update times and mailbox."""
    h = hashlib.sha256()
    for name, arr in sorted(model.state_arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class Trainer:
    def __init__(self, cfg: ModelConfig, dataset: TemporalDataset, threads: Optional[int] = None,
                 seed: Optional[int] = None, log: Optional[Callable[[dict], None]] = None,
                 model: Optional[TemporalModel] = None):
        self.cfg = cfg
        self.ds = dataset
        self.seed = cfg.train.seed if seed is None else seed
        self.threads = cfg.train.threads if threads is None else threads
        self.model = model or TemporalModel(cfg, dataset.num_nodes, dataset.node_dim,
                                            dataset.edge_dim, seed=self.seed)
        self.model.bind(dataset)
        # pointers live on the shared graph, so start from a clean slate
        self.sampler = (TemporalSampler(dataset.graph, cfg.sampling, self.threads, self.seed)
                        if cfg.needs_sampling else None)
        if self.sampler is not None:
            self.sampler.reset()
        self.log = log
        self.reports: List[EpochReport] = []
        self._prefetch = ThreadPoolExecutor(1)

    def close(self):
        self._prefetch.shutdown()
        if self.sampler is not None:
            self.sampler.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- batches -----------------------------------------------------------------
    def _prepare(self, es: int, ee: int, rng, epoch: int, index: int) -> Tuple[Batch, float]:
        t0 = time.perf_counter()
        ds = self.ds
        src, dst, t = ds.src[es:ee], ds.dst[es:ee], ds.times[es:ee]
        neg = sample_negatives(dst, ds.negative_pool, rng)
        ef = None if ds.edge_features is None else ds.edge_features[es:ee]
        batch = Batch(src, dst, neg, t, ef)
        if self.sampler is not None:
            batch.sampled = self.sampler.sample(batch.roots, batch.root_times, epoch, index)
        return batch, time.perf_counter() - t0

    def run_pass(self, ranges: Iterable[Tuple[int, int]], train: bool, rng, epoch: int,
                 collect: Optional[Tuple[int, int]] = None) -> PassResult:
        """Process ``ranges`` in order; loss/logits are gathered for batches inside ``collect``."""
        ranges = list(ranges)
        t_start = time.perf_counter()
        losses, weights, pos, neg = [], [], [], []
        sample_wall = 0.0
        pending = (self._prefetch.submit(self._prepare, *ranges[0], rng, epoch, 0)
                   if ranges else None)
        for i, (es, ee) in enumerate(ranges):
            batch, t_sample = pending.result()
            sample_wall += t_sample
            if i + 1 < len(ranges):
                pending = self._prefetch.submit(self._prepare, *ranges[i + 1], rng, epoch, i + 1)
            out = self.model.step(batch, train=train)
            if collect is None or (es >= collect[0] and ee <= collect[1]):
                losses.append(out.loss)
                weights.append(len(batch))
                pos.append(out.pos_logits)
                neg.append(out.neg_logits)
        loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        return PassResult(loss, np.concatenate(pos) if pos else np.zeros(0),
                          np.concatenate(neg) if neg else np.zeros(0),
                          time.perf_counter() - t_start, sample_wall, len(ranges))

    def _begin_pass(self, reset_memory: bool):
        if self.sampler is not None:
            self.sampler.reset()
        if reset_memory:
            self.model.reset_state()

    # -- training -----------------------------------------------------------------
    def train_epoch(self, epoch: int) -> Tuple[PassResult, int]:
        tr = self.cfg.train
        rng = np.random.default_rng([self.seed, epoch])
        sched = make_epoch_schedule(self.ds.split.train_end, tr.batch_size, tr.chunk_size, rng)
        self._begin_pass(tr.reset_memory_each_epoch or epoch == 0)
        return self.run_pass(sched.batches, True, rng, epoch), sched.epoch_start_offset

    def fit(self, epochs: Optional[int] = None, target_ap: Optional[float] = None,
            time_budget: Optional[float] = None) -> List[EpochReport]:
        epochs = self.cfg.train.epochs if epochs is None else epochs
        t0 = time.perf_counter()
        for epoch in range(epochs):
            res, offset = self.train_epoch(epoch)
            saved = None if self.cfg.train.reset_memory_each_epoch else self.model.state_arrays()
            ev = self.evaluate(test=False)
            if saved:
                self._restore(saved)
            rep = EpochReport(epoch, res.loss, ev.loss, ev.average_precision, res.wall,
                              res.sample_wall / res.wall if res.wall else 0.0, res.batches, offset)
            self.reports.append(rep)
            if self.log is not None:
                self.log({"event": "epoch", **asdict(rep)})
            if target_ap is not None and rep.val_ap >= target_ap:
                break
            if time_budget is not None and time.perf_counter() - t0 > time_budget:
                break
        return self.reports

    def _restore(self, arrays):
        m = self.model
        m.store.memory[:] = arrays["memory"]
        m.store.last_update[:] = arrays["last_update"]
        m.mailbox.mails[:] = arrays["mails"]
        m.mailbox.times[:] = arrays["mail_times"]
        m.mailbox.count[:] = arrays["mail_count"]
        m.mailbox.head[:] = arrays["mail_head"]

    # -- evaluation -----------------------------------------------------------------
    def evaluate(self, test: bool = True, batch_size: Optional[int] = None) -> EvalReport:
        """Reset memory, replay training events, then score validation (and test) edges.

        Every pass uses a constant batch size (600 by default) and a fixed
        negative stream, so two runs from the same parameters and seed end in
        bitwise-identical memory.
        """
        bs = batch_size or self.cfg.train.eval_batch_size
        sp = self.ds.split
        rng = np.random.default_rng([self.seed, _EVAL_STREAM])
        protocol = self.cfg.train.eval_protocol
        if protocol == "replay":
            self._begin_pass(True)
            replay = fixed_schedule(sp.train_end, bs).batches
        else:
            if self.sampler is not None:
                self.sampler.reset()
            replay = []
        val = fixed_schedule(sp.num_events, bs, sp.train_end, sp.valid_end).batches
        t0 = time.perf_counter()
        res = self.run_pass(replay + val, False, rng, -1, collect=(sp.train_end, sp.valid_end))
        digest = state_digest(self.model)
        report = EvalReport(average_precision(res.pos, res.neg) if len(res.pos) else float("nan"),
                            res.loss, len(res.pos), 0.0, 0.0, state_digest=digest)
        sample_wall = res.sample_wall
        if test and sp.valid_end < sp.num_events:
            tst = fixed_schedule(sp.num_events, bs, sp.valid_end).batches
            r2 = self.run_pass(tst, False, rng, -2)
            report.test_average_precision = average_precision(r2.pos, r2.neg)
            report.test_loss = r2.loss
            sample_wall += r2.sample_wall
        report.wall_time = time.perf_counter() - t0
        report.sampler_time_share = sample_wall / report.wall_time if report.wall_time else 0.0
        return report

    # -- checkpoints -------------------------------------------------------------------
    def save_checkpoint(self, path):
        save_params(path, self.model.tape, self.cfg.to_text())


def load_checkpoint(path) -> Tuple[ModelConfig, np.ndarray]:
    flat, text = load_params(path)
    return ModelConfig.from_text(text), flat


def trainer_from_checkpoint(path, dataset: TemporalDataset, **kw) -> Trainer:
    cfg, flat = load_checkpoint(path)
    tr = Trainer(cfg, dataset, **kw)
    tr.model.load_parameters(flat)
    return tr


def jsonl_logger(stream):
    def log(record):
        stream.write(json.dumps(record, sort_keys=True) + "\n")
        stream.flush()
    return log
