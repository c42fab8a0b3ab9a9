"""Parallel temporal neighbor sampler over a :class:`TCsrGraph`.

Per mini-batch, the sampler first advances the snapshot pointer arrays to the
batch's root timestamps, then for every layer and snapshot locates candidate
edges (pointers for hop-1, binary search for deeper hops), picks neighbors
and emits a :class:`MessageFlowGraph`.

Pointer arrays are indexed so that array ``S`` tracks "now" (time ``t``) and
array ``k < S`` tracks ``t - (S - k) * snapshot_length``. Snapshot ``s``
therefore lies between arrays ``S - s - 1`` and ``S - s``.
"""
from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ChronologyError, ConfigError, NodeIdError
from .tgraph import TCsrGraph

UNIFORM = "uniform"
MOST_RECENT = "most_recent"
ROOT_TIME = "root_time"
NEIGHBOR_TIME = "neighbor_time"

PHASES = ("pointer", "search", "select", "mfg")


@dataclass
class SamplingConfig:
    num_layers: int = 1
    fanouts: Sequence[int] = (10,)
    strategy: str = MOST_RECENT
    n_snapshots: int = 1
    snapshot_length: float = math.inf
    neighbor_timestamp_mode: str = NEIGHBOR_TIME

    def __post_init__(self):
        self.fanouts = tuple(int(k) for k in self.fanouts)
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if len(self.fanouts) != self.num_layers:
            raise ConfigError(f"need {self.num_layers} fanouts, got {len(self.fanouts)}")
        if any(k < 1 for k in self.fanouts):
            raise ConfigError("every fanout must be >= 1")
        if self.strategy not in (UNIFORM, MOST_RECENT):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.neighbor_timestamp_mode not in (ROOT_TIME, NEIGHBOR_TIME):
            raise ConfigError(f"unknown neighbor_timestamp_mode {self.neighbor_timestamp_mode!r}")
        if self.n_snapshots < 1:
            raise ConfigError("n_snapshots must be >= 1")
        if not self.snapshot_length > 0:
            raise ConfigError("snapshot_length must be positive")
        if self.n_snapshots > 1 and math.isinf(self.snapshot_length):
            raise ConfigError("multiple snapshots need a finite snapshot_length")

    def boundary_offset(self, k: int) -> float:
        """Time offset subtracted from ``t`` for pointer array ``k``."""
        S = self.n_snapshots
        if k == S:
            return 0.0
        if math.isinf(self.snapshot_length):
            return math.inf
        return (S - k) * self.snapshot_length

    def snapshot_window(self, t: float, s: int) -> tuple[float, float]:
        """Half-open time window ``[lo, hi)`` of snapshot ``s`` anchored at ``t``."""
        S = self.n_snapshots
        return t - self.boundary_offset(S - s - 1), t - self.boundary_offset(S - s)


@dataclass
class MessageFlowGraph:
    """One bipartite block: ``dst`` roots, sampled ``src`` nodes, and edges.

    ``src_nodes[:num_dst]`` repeats ``dst_nodes`` so the next (deeper) layer
    can compute embeddings for both from a single node list. Edges are
    grouped by ``edge_dst`` in ascending order.
    """

    dst_nodes: np.ndarray
    dst_times: np.ndarray
    src_nodes: np.ndarray
    src_times: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_ids: np.ndarray
    edge_dt: np.ndarray
    layer: int = 0
    snapshot: int = 0

    @property
    def num_dst(self) -> int:
        return len(self.dst_nodes)

    @property
    def num_src(self) -> int:
        return len(self.src_nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edge_ids)

    def edge_times(self) -> np.ndarray:
        return self.dst_times[self.edge_dst] - self.edge_dt

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_dst, minlength=self.num_dst)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.dst_nodes, self.dst_times, self.src_nodes, self.src_times,
                    self.edge_src, self.edge_dst, self.edge_ids, self.edge_dt):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class SampledBatch:
    mfgs: List[List[MessageFlowGraph]]  # [layer][snapshot]
    root_nodes: np.ndarray
    root_times: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.mfgs)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for row in self.mfgs:
            for m in row:
                h.update(m.checksum().encode())
        return h.hexdigest()


def derive_key(seed: int, *counters: int) -> int:
    """64-bit stream key from a seed and counters such as (epoch, batch, layer, snapshot)."""
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(c) & 0xFFFFFFFF for c in counters]])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def _chunks(n: int, parts: int):
    bounds = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(parts) if bounds[i + 1] > bounds[i]]


class TemporalSampler:
    """Stateful sampler bound to one graph and one :class:`SamplingConfig`."""

    def __init__(self, graph: TCsrGraph, cfg: SamplingConfig, n_threads: int = 1, seed: int = 0):
        self.graph = graph
        self.cfg = cfg
        self.n_threads = max(1, int(n_threads))
        self.seed = seed
        if graph.n_snapshots != cfg.n_snapshots:
            graph.configure_snapshots(cfg.n_snapshots)
        self._pool = ThreadPoolExecutor(self.n_threads) if self.n_threads > 1 else None
        self.timings = dict.fromkeys(PHASES, 0.0)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def reset(self):
        self.graph.reset_pointers()
        self.timings = dict.fromkeys(PHASES, 0.0)

    def _run(self, fn, n):
        parts = _chunks(n, self.n_threads)
        if self._pool is None or len(parts) <= 1:
            return [fn(lo, hi) for lo, hi in parts]
        return list(self._pool.map(lambda b: fn(*b), parts))

    # -- step 1: pointers ----------------------------------------------------
    def advance_pointers(self, nodes, target_times, pointer_index: int):
        """Advance pointer array ``pointer_index`` of ``nodes`` to ``target_times``.

        Duplicate nodes are collapsed to their largest target first; each
        distinct node is then owned by exactly one worker, which gives the
        per-node exclusion the pointer update needs without lock traffic.
        """
        g = self.graph
        nodes = np.asarray(nodes, dtype=np.int64)
        targets = np.asarray(target_times, dtype=np.float64)
        if nodes.size == 0:
            return
        _check_nodes(nodes, g.num_nodes)
        order = np.lexsort((targets, nodes))
        sn = nodes[order]
        last = np.ones(len(sn), dtype=bool)
        last[:-1] = sn[1:] != sn[:-1]
        uniq = np.ascontiguousarray(sn[last])
        tmax = np.ascontiguousarray(targets[order][last])
        row = g.pointers[pointer_index]

        def work(lo, hi):
            return _kernels.advance(g.indptr, g.times, row, uniq[lo:hi], tmax[lo:hi])

        moves = 0
        for (m, bad), (lo, _) in zip(self._run(work, len(uniq)), _chunks(len(uniq), self.n_threads)):
            moves += m
            if bad >= 0:
                v = int(uniq[lo + bad])
                p = int(row[v])
                raise ChronologyError(v, float(tmax[lo + bad]), float(g.times[p - 1]))
        g.pointer_moves[pointer_index] += moves

    def _advance_all(self, roots, times):
        cfg = self.cfg
        for k in range(cfg.n_snapshots + 1):
            off = cfg.boundary_offset(k)
            if math.isinf(off):
                continue
            self.advance_pointers(roots, times - off, k)

    # -- candidate location ------------------------------------------------
    def locate(self, nodes, times, snapshot: int, use_pointers: bool):
        g, cfg = self.graph, self.cfg
        S = cfg.n_snapshots
        nodes = np.ascontiguousarray(nodes, dtype=np.int64)
        times = np.ascontiguousarray(times, dtype=np.float64)
        lo_off = cfg.boundary_offset(S - snapshot - 1)
        hi_off = cfg.boundary_offset(S - snapshot)
        has_left = not math.isinf(lo_off)
        t_right = times - hi_off
        t_left = times - lo_off if has_left else times
        starts = np.empty(len(nodes), dtype=np.int64)
        ends = np.empty(len(nodes), dtype=np.int64)
        right_row = g.pointers[S - snapshot]
        left_row = g.pointers[S - snapshot - 1]

        def work(lo, hi):
            if use_pointers:
                _kernels.locate_from_pointers(g.indptr, g.times, right_row, left_row, has_left,
                                              nodes[lo:hi], t_right[lo:hi], t_left[lo:hi],
                                              starts[lo:hi], ends[lo:hi])
            else:
                _kernels.locate_bsearch(g.indptr, g.times, nodes[lo:hi], t_right[lo:hi],
                                        t_left[lo:hi], has_left, starts[lo:hi], ends[lo:hi])

        self._run(work, len(nodes))
        return starts, ends

    def select(self, starts, ends, k: int, key: int):
        g = self.graph
        n = len(starts)
        out = np.empty((n, k), dtype=np.int64)
        count = np.empty(n, dtype=np.int64)
        most_recent = self.cfg.strategy == MOST_RECENT
        all_valid = not g.has_deletions

        def work(lo, hi):
            _kernels.select(g.valid, all_valid, starts[lo:hi], ends[lo:hi], k, most_recent,
                            np.uint64(key), lo, out[lo:hi], count[lo:hi])

        self._run(work, n)
        return out, count

    # -- full batch ----------------------------------------------------------
    def sample_layer(self, nodes, times, layer: int, snapshot: int, key: int,
                     use_pointers: Optional[bool] = None) -> MessageFlowGraph:
        cfg = self.cfg
        if use_pointers is None:
            use_pointers = layer == 0
        t0 = time.perf_counter()
        starts, ends = self.locate(nodes, times, snapshot, use_pointers)
        t1 = time.perf_counter()
        eids, count = self.select(starts, ends, cfg.fanouts[layer], key)
        t2 = time.perf_counter()
        mfg = build_mfg(self.graph, nodes, times, eids, count, cfg.neighbor_timestamp_mode,
                        layer, snapshot, self._run)
        t3 = time.perf_counter()
        self.timings["search"] += t1 - t0
        self.timings["select"] += t2 - t1
        self.timings["mfg"] += t3 - t2
        return mfg

    def sample(self, roots, root_times, epoch: int = 0, batch: int = 0) -> SampledBatch:
        roots = np.ascontiguousarray(roots, dtype=np.int64)
        root_times = np.ascontiguousarray(root_times, dtype=np.float64)
        _check_nodes(roots, self.graph.num_nodes)
        cfg = self.cfg
        t0 = time.perf_counter()
        self._advance_all(roots, root_times)
        self.timings["pointer"] += time.perf_counter() - t0

        grid: List[List[MessageFlowGraph]] = [[] for _ in range(cfg.num_layers)]
        for s in range(cfg.n_snapshots):
            nodes, times = roots, root_times
            for layer in range(cfg.num_layers):
                key = derive_key(self.seed, epoch, batch, layer, s)
                mfg = self.sample_layer(nodes, times, layer, s, key)
                grid[layer].append(mfg)
                nodes, times = mfg.src_nodes, mfg.src_times
        return SampledBatch(grid, roots, root_times)


def build_mfg(g: TCsrGraph, nodes, times, eids, count, ts_mode=NEIGHBOR_TIME,
              layer=0, snapshot=0, run=None) -> MessageFlowGraph:
    """Assemble a message flow graph from per-root selections.

    New source nodes are deduplicated on (node, timestamp) and listed after
    the destination nodes in order of first appearance. ``run(fn, n)`` may
    spread the edge gather over root ranges (the dedup pass stays serial).
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.int64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    count = np.asarray(count, dtype=np.int64)
    n_dst = len(nodes)
    offsets = np.zeros(n_dst + 1, dtype=np.int64)
    np.cumsum(count, out=offsets[1:])
    n_e = int(offsets[-1])
    edge_dst = np.empty(n_e, np.int64)
    edge_ids = np.empty(n_e, np.int64)
    nb_nodes = np.empty(n_e, np.int64)
    nb_times = np.empty(n_e, np.float64)
    edge_dt = np.empty(n_e, np.float64)
    neighbor_time = ts_mode == NEIGHBOR_TIME

    def work(lo, hi):
        a, b = offsets[lo], offsets[hi]
        _kernels.gather_edges(eids[lo:hi], count[lo:hi], offsets[lo:hi] - a, g.times, g.indices,
                              times[lo:hi], neighbor_time, edge_dst[a:b], edge_ids[a:b],
                              nb_nodes[a:b], nb_times[a:b], edge_dt[a:b])
        edge_dst[a:b] += lo

    if run is None:
        work(0, n_dst)
    else:
        run(work, n_dst)

    all_nodes = np.concatenate([nodes, nb_nodes])
    all_times = np.concatenate([times, nb_times])
    slot, new_pos = _kernels.dedup_pairs(all_nodes, all_times.view(np.int64), n_dst)
    return MessageFlowGraph(
        dst_nodes=nodes, dst_times=times,
        src_nodes=np.concatenate([nodes, all_nodes[new_pos]]),
        src_times=np.concatenate([times, all_times[new_pos]]),
        edge_src=slot[n_dst:], edge_dst=edge_dst, edge_ids=edge_ids,
        edge_dt=edge_dt, layer=layer, snapshot=snapshot,
    )


def _check_nodes(nodes, num_nodes):
    if nodes.size:
        bad = np.flatnonzero((nodes < 0) | (nodes >= num_nodes))
        if len(bad):
            raise NodeIdError(int(nodes[bad[0]]), num_nodes)


# -- functional surface -------------------------------------------------------

def advance_pointers(g: TCsrGraph, nodes, target_times, pointer_index: int, n_threads: int = 1):
    cfg = SamplingConfig(n_snapshots=g.n_snapshots,
                         snapshot_length=1.0 if g.n_snapshots > 1 else math.inf)
    with TemporalSampler(g, cfg, n_threads=n_threads) as sampler:
        sampler.advance_pointers(nodes, target_times, pointer_index)


def locate_candidates(g: TCsrGraph, v: int, t: float, snapshot: int, cfg: SamplingConfig,
                      use_pointers: bool = False) -> tuple[int, int]:
    """Candidate edge range of node ``v`` at time ``t`` in ``snapshot``.

    With ``use_pointers`` the graph's pointer arrays must already have been
    advanced to at least ``t`` (as :meth:`TemporalSampler.sample` does).
    """
    if not 0 <= v < g.num_nodes:
        raise NodeIdError(v, g.num_nodes)
    sampler = TemporalSampler(g, cfg)
    s, e = sampler.locate(np.array([v]), np.array([t], dtype=np.float64), snapshot, use_pointers)
    return int(s[0]), int(e[0])


def sample_layer(g: TCsrGraph, roots, root_times, snapshot: int, cfg: SamplingConfig,
                 key: int = 0, layer: int = 0) -> MessageFlowGraph:
    sampler = TemporalSampler(g, cfg)
    return sampler.sample_layer(roots, root_times, layer, snapshot, key, use_pointers=False)


def sample_batch(g: TCsrGraph, roots, root_times, cfg: SamplingConfig, seed: int = 0,
                 n_threads: int = 1, epoch: int = 0, batch: int = 0) -> SampledBatch:
    with TemporalSampler(g, cfg, n_threads=n_threads, seed=seed) as sampler:
        return sampler.sample(roots, root_times, epoch, batch)
