"""Epoch batch schedules with random chunk-aligned start offsets.

Training edges are processed chronologically in batches of ``bs`` edges.
Each epoch starts at a random multiple of the chunk size ``cs`` below ``bs``,
so chunk boundaries fall at different batch boundaries across epochs.
Edges before the offset are skipped for that epoch, and a trailing partial
batch is dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ScheduleError


@dataclass
class ChunkSchedule:
    batch_size: int
    chunk_size: int
    epoch_start_offset: int
    batches: List[Tuple[int, int]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)

    def dumps(self) -> str:
        return "".join(f"{s},{e}\n" for s, e in self.batches)


@dataclass
class DependencyStats:
    intra_count: int
    inter_count: int

    @property
    def total_dependent_pairs(self) -> int:
        return self.intra_count + self.inter_count


def make_epoch_schedule(num_train_edges: int, bs: int, cs: int, rng: np.random.Generator) -> ChunkSchedule:
    if bs <= 0 or cs <= 0:
        raise ScheduleError("batch and chunk sizes must be positive")
    if bs % cs:
        raise ScheduleError(f"chunk size {cs} does not divide batch size {bs}")
    if bs > num_train_edges:
        raise ScheduleError(f"batch size {bs} exceeds {num_train_edges} training edges")
    offset = int(rng.integers(0, bs // cs)) * cs
    starts = range(offset, num_train_edges - bs + 1, bs)
    return ChunkSchedule(bs, cs, offset, [(s, s + bs) for s in starts])


def fixed_schedule(num_edges: int, bs: int, start: int = 0, end: int | None = None,
                   keep_partial: bool = True) -> ChunkSchedule:
    """Plain chronological batches over ``[start, end)`` (used for evaluation passes)."""
    end = num_edges if end is None else end
    bounds = list(range(start, end, bs))
    batches = [(s, min(s + bs, end)) for s in bounds]
    if not keep_partial and batches and batches[-1][1] - batches[-1][0] < bs:
        batches.pop()
    return ChunkSchedule(bs, bs, start, batches)


def sample_negatives(pos_dst: np.ndarray, candidates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniform negative destination per positive edge, never equal to its true destination."""
    pos_dst = np.asarray(pos_dst)
    candidates = np.asarray(candidates)
    if len(candidates) < 2:
        raise ScheduleError("need at least two candidate destinations for negative sampling")
    neg = candidates[rng.integers(0, len(candidates), size=len(pos_dst))]
    clash = neg == pos_dst
    while clash.any():
        neg[clash] = candidates[rng.integers(0, len(candidates), size=int(clash.sum()))]
        clash = neg == pos_dst
    return neg


def _batch_ids(num_edges: int, batches: Sequence[Tuple[int, int]]) -> np.ndarray:
    bid = np.full(num_edges, -1, dtype=np.int64)
    for i, (s, e) in enumerate(batches):
        bid[s:e] = i
    return bid


def dependency_stats(batches: Sequence[Tuple[int, int]], src, dst) -> DependencyStats:
    """Count pairs of scheduled edges sharing an endpoint, split by batch membership.

    Only edges covered by ``batches`` take part. Two edges sharing both
    endpoints still form a single pair.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    bid = _batch_ids(len(src), batches)
    keep = bid >= 0
    src, dst, bid = src[keep], dst[keep], bid[keep]
    if len(src) < 2:
        return DependencyStats(0, 0)

    # inclusion-exclusion: pairs sharing a node, minus pairs counted twice
    # because they share both endpoints
    loop = src == dst
    node = np.concatenate([src, dst[~loop]])
    node_bid = np.concatenate([bid, bid[~loop]])
    lo, hi = np.minimum(src, dst)[~loop], np.maximum(src, dst)[~loop]
    total = _pair_count(node[:, None]) - _pair_count(np.stack([lo, hi], 1))
    intra = (_pair_count(np.stack([node, node_bid], 1))
             - _pair_count(np.stack([lo, hi, bid[~loop]], 1)))
    return DependencyStats(intra, total - intra)


def _pair_count(keys: np.ndarray) -> int:
    """Sum of c*(c-1)/2 over groups of identical rows."""
    if len(keys) == 0:
        return 0
    _, c = np.unique(keys, axis=0, return_counts=True)
    return int((c * (c - 1) // 2).sum())
