"""Temporal CSR (T-CSR) storage for dynamic graphs.

Edges are grouped by source node and sorted by timestamp inside each group;
an edge's id is simply its position in the sorted ``indices``/``times``
arrays. ``n_snapshots + 1`` pointer arrays per node track snapshot
boundaries as chronological mini-batches sweep through an epoch.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EdgeIdError, FormatError, NodeIdError, TimestampError, DatasetError


class EventKind(enum.IntEnum):
    INSERT = 0
    DELETE = 1


@dataclass(frozen=True)
class TemporalEdge:
    src: int
    dst: int
    time: float
    edge_feature: Optional[np.ndarray] = None
    event_kind: EventKind = EventKind.INSERT


@dataclass(frozen=True)
class DatasetSplit:
    """Chronological split boundaries over the globally time-sorted event list."""

    train_end: int
    valid_end: int
    num_events: int

    def __post_init__(self):
        if not 0 < self.train_end <= self.valid_end <= self.num_events:
            raise DatasetError(
                f"invalid split: need 0 < train_end({self.train_end}) <= "
                f"valid_end({self.valid_end}) <= |E|({self.num_events})"
            )

    @property
    def train(self) -> slice:
        return slice(0, self.train_end)

    @property
    def valid(self) -> slice:
        return slice(self.train_end, self.valid_end)

    @property
    def test(self) -> slice:
        return slice(self.valid_end, self.num_events)


class TCsrGraph:
    """Temporal CSR graph.

    Structure arrays (``indptr``, ``indices``, ``times``) are fixed after
    construction. ``pointers`` and ``valid`` are the only mutable parts and
    are only touched at mini-batch granularity.
    """

    def __init__(self, indptr, indices, times, n_snapshots=1, valid=None,
                 edge_features=None, node_features=None,
                 delete_times=None, delete_targets=None, delete_entries=None):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.times = np.ascontiguousarray(times, dtype=np.float64)
        self.num_nodes = len(self.indptr) - 1
        self.num_edges = len(self.indices)
        if valid is None:
            valid = np.ones(self.num_edges, dtype=np.bool_)
        self.valid = np.ascontiguousarray(valid, dtype=np.bool_)
        self.edge_features = edge_features
        self.node_features = node_features
        self.delete_times = (np.zeros(0) if delete_times is None
                             else np.asarray(delete_times, dtype=np.float64))
        self.delete_targets = (np.zeros(0, np.int64) if delete_targets is None
                               else np.asarray(delete_targets, dtype=np.int64))
        # positions of the delete events themselves; never sampling candidates
        self.delete_entries = (np.zeros(0, np.int64) if delete_entries is None
                               else np.asarray(delete_entries, dtype=np.int64))
        self.configure_snapshots(n_snapshots)

    # -- construction -----------------------------------------------------
    @classmethod
    def from_arrays(cls, src, dst, times, num_nodes, n_snapshots=1, kinds=None,
                    edge_features=None, node_features=None) -> "TCsrGraph":
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        if not (len(src) == len(dst) == len(times)):
            raise DatasetError("src, dst and times must have equal length")
        for arr in (src, dst):
            bad = np.flatnonzero((arr < 0) | (arr >= num_nodes))
            if len(bad):
                raise NodeIdError(int(arr[bad[0]]), num_nodes)
        bad = np.flatnonzero(~(times >= 0))
        if len(bad):
            raise TimestampError(f"edge {int(bad[0])} has invalid timestamp {times[bad[0]]!r}")

        n = len(src)
        # lexsort: last key is primary -> group by src, then time, then input order
        order = np.lexsort((np.arange(n), times, src))
        counts = np.bincount(src, minlength=num_nodes)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = dst[order]
        sorted_times = times[order]

        kinds = np.zeros(n, np.int8) if kinds is None else np.asarray(kinds, dtype=np.int8)
        sorted_kinds = kinds[order]
        valid = sorted_kinds == EventKind.INSERT
        del_times, del_targets, del_entries = _match_deletions(
            indptr, indices, sorted_times, sorted_kinds)

        if edge_features is not None:
            edge_features = np.asarray(edge_features)[order]
        return cls(indptr, indices, sorted_times, n_snapshots, valid, edge_features,
                   node_features, del_times, del_targets, del_entries)

    def configure_snapshots(self, n_snapshots: int):
        if n_snapshots < 1:
            raise ValueError("n_snapshots must be >= 1")
        self.n_snapshots = int(n_snapshots)
        self.pointers = np.empty((self.n_snapshots + 1, self.num_nodes), dtype=np.int64)
        self.pointer_moves = np.zeros(self.n_snapshots + 1, dtype=np.int64)
        self.reset_pointers()

    # -- queries ----------------------------------------------------------
    def neighbor_slice(self, v: int) -> tuple[int, int]:
        if not 0 <= v < self.num_nodes:
            raise NodeIdError(v, self.num_nodes)
        return int(self.indptr[v]), int(self.indptr[v + 1])

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def source_of(self, eids) -> np.ndarray:
        """Source node of each edge id (inverse of the indptr grouping)."""
        return np.searchsorted(self.indptr, np.asarray(eids), side="right") - 1

    @property
    def has_deletions(self) -> bool:
        return not bool(self.valid.all())

    def storage_entries(self) -> int:
        """Number of index/time entries held by the structure (excludes the validity bits).

        ``2|E|`` for indices and times, ``|V|+1`` for indptr and
        ``(n_snapshots+1)|V|`` for the pointer arrays.
        """
        return (self.indices.size + self.times.size + self.indptr.size
                + self.pointers.size)

    # -- mutation at batch boundaries --------------------------------------
    def reset_pointers(self):
        self.pointers[:] = self.indptr[:-1]
        self.pointer_moves[:] = 0

    def apply_deletions(self, deleted_edge_ids: Iterable[int]):
        eids = np.asarray(list(deleted_edge_ids) if not isinstance(deleted_edge_ids, np.ndarray)
                          else deleted_edge_ids, dtype=np.int64)
        if eids.size:
            bad = np.flatnonzero((eids < 0) | (eids >= self.num_edges))
            if len(bad):
                raise EdgeIdError(int(eids[bad[0]]), self.num_edges)
            self.valid[eids] = False

    def deletions_between(self, t_start: float, t_end: float) -> np.ndarray:
        """Edge ids removed by delete events with time in ``[t_start, t_end)``."""
        if self.delete_times.size == 0:
            return np.zeros(0, np.int64)
        lo = np.searchsorted(self.delete_times, t_start, side="left")
        hi = np.searchsorted(self.delete_times, t_end, side="left")
        targets = self.delete_targets[lo:hi]
        return targets[targets >= 0]

    def restore_validity(self):
        """Undo all deletions applied so far (delete-event entries stay invalid)."""
        self.valid[:] = True
        self.valid[self.delete_entries] = False

    # -- persistence ------------------------------------------------------
    def save(self, path):
        save_tcsr(self, path)

    @classmethod
    def load(cls, path) -> "TCsrGraph":
        return load_tcsr(path)

    def __repr__(self):
        return (f"TCsrGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, "
                f"n_snapshots={self.n_snapshots})")


def _match_deletions(indptr, indices, times, kinds):
    """Pair each delete entry with the latest earlier insert of the same (src, dst)."""
    del_pos = np.flatnonzero(kinds == EventKind.DELETE)
    if del_pos.size == 0:
        return np.zeros(0), np.zeros(0, np.int64), del_pos
    targets = np.full(del_pos.size, -1, dtype=np.int64)
    srcs = np.searchsorted(indptr, del_pos, side="right") - 1
    for j, (p, v) in enumerate(zip(del_pos, srcs)):
        lo = indptr[v]
        for i in range(p - 1, lo - 1, -1):
            if kinds[i] == EventKind.INSERT and indices[i] == indices[p] and times[i] <= times[p]:
                targets[j] = i
                break
    d_times = times[del_pos]
    order = np.argsort(d_times, kind="stable")
    return d_times[order], targets[order], del_pos


def build_tcsr(edges: Sequence[TemporalEdge], num_nodes: int, n_snapshots: int = 1) -> TCsrGraph:
    """Build a T-CSR graph from a list of :class:`TemporalEdge`.

    Equal timestamps within one node keep their input order.
    """
    n = len(edges)
    src = np.fromiter((e.src for e in edges), dtype=np.int64, count=n)
    dst = np.fromiter((e.dst for e in edges), dtype=np.int64, count=n)
    times = np.fromiter((e.time for e in edges), dtype=np.float64, count=n)
    kinds = np.fromiter((int(e.event_kind) for e in edges), dtype=np.int8, count=n)
    feats = None
    if n and edges[0].edge_feature is not None:
        feats = np.stack([np.asarray(e.edge_feature) for e in edges])
    return TCsrGraph.from_arrays(src, dst, times, num_nodes, n_snapshots, kinds=kinds,
                                 edge_features=feats)


def neighbor_slice(g: TCsrGraph, v: int) -> tuple[int, int]:
    return g.neighbor_slice(v)


def apply_deletions(g: TCsrGraph, deleted_edge_ids):
    g.apply_deletions(deleted_edge_ids)


def reset_pointers(g: TCsrGraph):
    g.reset_pointers()


# -- binary snapshot format -------------------------------------------------
# header: magic(8s) version(u4) num_nodes(u8) num_edges(u8) n_snapshots(u4) flags(u4)
_MAGIC = b"TCSRGRPH"
_VERSION = 1
_HEADER = struct.Struct("<8sIQQII")
_FLAG_EDGE_FEATS = 1
_FLAG_NODE_FEATS = 2


def _write_array(f, arr, dtype):
    a = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
    f.write(struct.pack("<Q", a.size))
    f.write(a.tobytes())


def _read_array(f, dtype):
    (size,) = struct.unpack("<Q", f.read(8))
    dt = np.dtype(dtype).newbyteorder("<")
    buf = f.read(size * dt.itemsize)
    if len(buf) != size * dt.itemsize:
        raise FormatError("truncated array payload")
    return np.frombuffer(buf, dtype=dt).astype(dtype)


def save_tcsr(g: TCsrGraph, path):
    flags = 0
    if g.edge_features is not None:
        flags |= _FLAG_EDGE_FEATS
    if g.node_features is not None:
        flags |= _FLAG_NODE_FEATS
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, g.num_nodes, g.num_edges, g.n_snapshots, flags))
        _write_array(f, g.indptr, np.int64)
        _write_array(f, g.indices, np.int64)
        _write_array(f, g.times, np.float64)
        _write_array(f, g.valid, np.uint8)
        _write_array(f, g.delete_times, np.float64)
        _write_array(f, g.delete_targets, np.int64)
        _write_array(f, g.delete_entries, np.int64)
        for flag, feats in ((_FLAG_EDGE_FEATS, g.edge_features), (_FLAG_NODE_FEATS, g.node_features)):
            if flags & flag:
                feats = np.asarray(feats, dtype=np.float64)
                f.write(struct.pack("<QQ", *feats.reshape(feats.shape[0], -1).shape))
                f.write(np.ascontiguousarray(feats, dtype="<f8").tobytes())


def load_tcsr(path) -> TCsrGraph:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError("file too short for T-CSR header")
        magic, version, num_nodes, num_edges, n_snap, flags = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"unsupported T-CSR format version {version}")
        indptr = _read_array(f, np.int64)
        indices = _read_array(f, np.int64)
        times = _read_array(f, np.float64)
        valid = _read_array(f, np.uint8).astype(bool)
        d_times = _read_array(f, np.float64)
        d_targets = _read_array(f, np.int64)
        d_entries = _read_array(f, np.int64)
        feats = {}
        for flag in (_FLAG_EDGE_FEATS, _FLAG_NODE_FEATS):
            if flags & flag:
                rows, cols = struct.unpack("<QQ", f.read(16))
                buf = f.read(rows * cols * 8)
                feats[flag] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if len(indptr) != num_nodes + 1 or len(indices) != num_edges:
        raise FormatError("array sizes disagree with header")
    return TCsrGraph(indptr, indices, times, n_snap, valid, feats.get(_FLAG_EDGE_FEATS),
                     feats.get(_FLAG_NODE_FEATS), d_times, d_targets, d_entries)
