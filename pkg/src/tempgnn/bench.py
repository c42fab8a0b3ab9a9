"""Sampler benchmark: one epoch of batch sampling per thread count, with a phase breakdown."""
from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass
from typing import List, Sequence

import numpy as np

from .config import preset
from .data import TemporalDataset
from .sampler import PHASES, SamplingConfig, TemporalSampler
from .sched import fixed_schedule, sample_negatives


@dataclass
class BenchRow:
    threads: int
    total: float
    pointer: float
    search: float
    select: float
    mfg: float
    other: float
    batches: int
    checksum: str

    def as_dict(self):
        return asdict(self)


def sampling_preset(name: str) -> SamplingConfig:
    """Sampling part of the DySAT, TGAT or TGN reference configuration."""
    return preset(name).sampling


def epoch_roots(ds: TemporalDataset, batch_size: int = 600, seed: int = 0):
    """Roots (src, dst, negative) and times of every chronological batch of the training set."""
    rng = np.random.default_rng(seed)
    out = []
    for es, ee in fixed_schedule(ds.split.train_end, batch_size).batches:
        dst = ds.dst[es:ee]
        neg = sample_negatives(dst, ds.negative_pool, rng)
        out.append((np.concatenate([ds.src[es:ee], dst, neg]), np.tile(ds.times[es:ee], 3)))
    return out


def bench_sampler(ds: TemporalDataset, cfg: SamplingConfig, thread_counts: Sequence[int],
                  batch_size: int = 600, seed: int = 0, warmup: bool = True) -> List[BenchRow]:
    roots = epoch_roots(ds, batch_size, seed)
    rows = []
    if warmup and roots:
        # compile the kernels outside the timed region
        with TemporalSampler(ds.graph, cfg, 1, seed) as s:
            s.sample(*roots[0])
    for n in thread_counts:
        with TemporalSampler(ds.graph, cfg, n, seed) as s:
            s.reset()
            digest = hashlib.sha256()
            total = 0.0
            for b, (r, t) in enumerate(roots):
                t0 = time.perf_counter()
                batch = s.sample(r, t, 0, b)
                total += time.perf_counter() - t0
                digest.update(batch.checksum().encode())  # outside the timed region
            ph = dict(s.timings)
        rows.append(BenchRow(n, total, *(ph[p] for p in PHASES),
                             max(0.0, total - sum(ph.values())), len(roots), digest.hexdigest()))
    return rows
