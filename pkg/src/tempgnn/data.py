"""Dataset ingestion and synthetic generators.

A dataset directory holds ``edges.csv`` with a header row naming at least
``src,dst,time`` (an optional ``split`` column takes ``train``/``valid``/
``test`` or ``0``/``1``/``2``), plus optional ``node_features.npy`` and
``edge_features.npy`` (rows in CSV order).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetError
from .tgraph import DatasetSplit, TCsrGraph

_SPLIT_NAMES = {"train": 0, "valid": 1, "val": 1, "test": 2, "0": 0, "1": 1, "2": 2}
RANDOM_EDGE_DIM = 128


@dataclass
class TemporalDataset:
    """Events in global chronological order plus the bidirectional T-CSR graph."""

    src: np.ndarray
    dst: np.ndarray
    times: np.ndarray
    num_nodes: int
    split: DatasetSplit
    edge_features: Optional[np.ndarray] = None
    node_features: Optional[np.ndarray] = None
    name: str = "dataset"
    node_ids: Optional[np.ndarray] = None  # original id of each dense id
    graph: TCsrGraph = field(init=False, repr=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if np.any(np.diff(self.times) < 0):
            raise DatasetError("events must be in chronological order")
        if self.split.num_events != len(self.src):
            raise DatasetError("split does not cover the event list")
        self.graph = build_bidirectional(self.src, self.dst, self.times, self.num_nodes,
                                         self.edge_features, self.node_features)
        self.negative_pool = np.unique(self.dst)

    @property
    def num_events(self) -> int:
        return len(self.src)

    @property
    def edge_dim(self) -> int:
        return 0 if self.edge_features is None else self.edge_features.shape[1]

    @property
    def node_dim(self) -> int:
        return 0 if self.node_features is None else self.node_features.shape[1]

    def stats(self) -> dict:
        return {
            "name": self.name,
            "num_nodes": int(self.num_nodes),
            "num_edges": int(self.num_events),
            "edge_dim": int(self.edge_dim),
            "node_dim": int(self.node_dim),
            "max_time": float(self.times[-1]) if self.num_events else 0.0,
            "train_end": int(self.split.train_end),
            "valid_end": int(self.split.valid_end),
        }

    def save(self, directory):
        """Write the dataset back out in the on-disk format read by :func:`load_dataset`."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        split = np.zeros(self.num_events, dtype=np.int64)
        split[self.split.valid] = 1
        split[self.split.test] = 2
        names = np.array(["train", "valid", "test"])[split]
        with open(d / "edges.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["src", "dst", "time", "split"])
            for row in zip(self.src.tolist(), self.dst.tolist(), self.times.tolist(), names):
                w.writerow(row)
        if self.edge_features is not None:
            np.save(d / "edge_features.npy", self.edge_features)
        if self.node_features is not None:
            np.save(d / "node_features.npy", self.node_features)


def build_bidirectional(src, dst, times, num_nodes, edge_features=None, node_features=None):
    """Each interaction becomes an outgoing edge of both endpoints."""
    ef = None if edge_features is None else np.concatenate([edge_features, edge_features])
    return TCsrGraph.from_arrays(np.concatenate([src, dst]), np.concatenate([dst, src]),
                                 np.concatenate([times, times]), num_nodes,
                                 edge_features=ef, node_features=node_features)


def split_by_quantile(n: int, train=0.70, valid=0.15) -> DatasetSplit:
    train_end = max(1, int(round(n * train)))
    valid_end = max(train_end, int(round(n * (train + valid))))
    return DatasetSplit(train_end, min(valid_end, n), n)


def _parse_csv(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DatasetError("edge file is empty", line=1) from None
        for col in ("src", "dst", "time"):
            if col not in header:
                raise DatasetError(f"missing column {col!r} in header", line=1)
        i_src, i_dst, i_t = header.index("src"), header.index("dst"), header.index("time")
        i_split = header.index("split") if "split" in header else None
        src, dst, times, split = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            src.append(row[i_src].strip())
            dst.append(row[i_dst].strip())
            try:
                t = float(row[i_t])
            except ValueError:
                raise DatasetError(f"non-numeric timestamp {row[i_t]!r}", line=lineno) from None
            if not math.isfinite(t) or t < 0:
                raise DatasetError(f"timestamp must be finite and >= 0, got {row[i_t]!r}", line=lineno)
            times.append(t)
            if i_split is not None:
                key = row[i_split].strip().lower()
                if key not in _SPLIT_NAMES:
                    raise DatasetError(f"unknown split label {row[i_split]!r}", line=lineno)
                split.append(_SPLIT_NAMES[key])
            if not src[-1] or not dst[-1]:
                raise DatasetError("empty node id", line=lineno)
    return src, dst, np.array(times, dtype=np.float64), (np.array(split) if i_split is not None else None)


def _densify(src_tok, dst_tok):
    """Map arbitrary id tokens to dense ints; numeric ids keep their numeric order."""
    tokens = np.array(src_tok + dst_tok)
    try:
        keys = tokens.astype(np.int64)
    except ValueError:
        keys = tokens
    uniq, inv = np.unique(keys, return_inverse=True)
    n = len(src_tok)
    return inv[:n].astype(np.int64), inv[n:].astype(np.int64), uniq


def load_dataset(edge_csv, node_feat_file=None, edge_feat_file=None, *,
                 random_edge_features: bool = False, seed: int = 0,
                 name: Optional[str] = None) -> TemporalDataset:
    """Read a CSV edge list (and optional ``.npy`` feature matrices).

    Rows are canonically ordered by (time, src, dst) so that shuffled input
    produces the same graph. Without a ``split`` column the first 70% of
    events train, the next 15% validate and the rest test.
    """
    src_tok, dst_tok, times, split_col = _parse_csv(edge_csv)
    if not len(times):
        raise DatasetError("edge file has no events")
    src, dst, ids = _densify(src_tok, dst_tok)
    order = np.lexsort((dst, src, times))
    src, dst, times = src[order], dst[order], times[order]

    edge_features = None
    if edge_feat_file is not None:
        edge_features = np.load(edge_feat_file)
        if edge_features.ndim != 2 or len(edge_features) != len(order):
            raise DatasetError(f"edge feature matrix must have one row per event, got {edge_features.shape}")
        edge_features = edge_features[order].astype(np.float32)
    elif random_edge_features:
        rng = np.random.default_rng(seed)
        edge_features = rng.standard_normal((len(order), RANDOM_EDGE_DIM)).astype(np.float32)

    node_features = None
    if node_feat_file is not None:
        node_features = np.load(node_feat_file).astype(np.float32)
        if node_features.ndim != 2 or len(node_features) < len(ids):
            raise DatasetError(f"node feature matrix must have at least {len(ids)} rows")
        node_features = node_features[: len(ids)] if ids.dtype.kind != "i" else _align_rows(node_features, ids)

    if split_col is not None:
        lab = split_col[order]
        if np.any(np.diff(lab) < 0):
            raise DatasetError("split labels are not chronological (train < valid < test)")
        train_end = int(np.sum(lab == 0))
        valid_end = train_end + int(np.sum(lab == 1))
        if train_end == 0:
            raise DatasetError("split column marks no training events")
        split = DatasetSplit(train_end, valid_end, len(lab))
    else:
        split = split_by_quantile(len(order))
    return TemporalDataset(src, dst, times, len(ids), split, edge_features, node_features,
                           name=name or Path(edge_csv).stem, node_ids=ids)


def _align_rows(feats, ids):
    """Node features indexed by original integer id, reordered to dense ids."""
    if ids.min() >= 0 and ids.max() < len(feats):
        return feats[ids]
    raise DatasetError("node ids fall outside the node feature matrix")


def load_dataset_dir(directory, **kw) -> TemporalDataset:
    d = Path(directory)
    if not (d / "edges.csv").exists():
        raise DatasetError(f"{d} has no edges.csv")
    nf = d / "node_features.npy"
    ef = d / "edge_features.npy"
    return load_dataset(d / "edges.csv", nf if nf.exists() else None, ef if ef.exists() else None,
                        name=kw.pop("name", d.name), **kw)


# -- synthetic data ------------------------------------------------------------

def planted_dataset(n_users=1000, n_items=1000, n_events=50_000, items_per_user=3,
                    noise=0.05, node_dim=32, seed=0) -> TemporalDataset:
    """Bipartite stream where every user keeps revisiting a few fixed items in turn.

    Each user owns ``items_per_user`` items and cycles through them; a
    fraction ``noise`` of events goes to a random item instead. Users
    fire as independent Poisson processes, so recurring (user, item) pairs
    predict future edges.
    """
    rng = np.random.default_rng(seed)
    own = rng.integers(0, n_items, size=(n_users, items_per_user))
    users = rng.integers(0, n_users, size=n_events)
    times = np.sort(rng.exponential(1.0, size=n_events).cumsum())
    # position of each event in its user's sequence
    order = np.argsort(users, kind="stable")
    rank = np.empty(n_events, np.int64)
    counts = np.bincount(users, minlength=n_users)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank[order] = np.arange(n_events) - np.repeat(starts, counts)
    items = own[users, rank % items_per_user]
    flip = rng.random(n_events) < noise
    items[flip] = rng.integers(0, n_items, size=int(flip.sum()))
    node_features = rng.standard_normal((n_users + n_items, node_dim)).astype(np.float32)
    return TemporalDataset(users, items + n_users, times, n_users + n_items,
                           split_by_quantile(n_events), node_features=node_features,
                           name="planted")


def random_dataset(n_nodes=5000, n_events=1_000_000, edge_dim=0, seed=0, name="random"):
    """Uniformly random interactions on a shared id space (for sampler benchmarks)."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, size=n_events)
    dst = rng.integers(0, n_nodes, size=n_events)
    times = np.sort(rng.uniform(0, 1e6, size=n_events))
    ef = rng.standard_normal((n_events, edge_dim)).astype(np.float32) if edge_dim else None
    return TemporalDataset(src, dst, times, n_nodes, split_by_quantile(n_events), ef, name=name)


def wikipedia_like(seed=0, scale=1.0) -> TemporalDataset:
    """Random bipartite stream with the published Wikipedia shape: 9,227 nodes,
    157,474 edges, 172-dim edge features, timestamps up to about 2.7e6 s."""
    rng = np.random.default_rng(seed)
    n_users, n_items = int(8227 * scale), int(1000 * scale)
    n = int(157_474 * scale)
    pop_u = rng.zipf(1.6, size=n) % n_users
    pop_i = rng.zipf(1.6, size=n) % n_items
    times = np.sort(rng.uniform(0, 2.678e6, size=n))
    times[-1] = 2.678e6
    ef = rng.standard_normal((n, 172)).astype(np.float32)
    return TemporalDataset(pop_u, pop_i + n_users, times, n_users + n_items,
                           split_by_quantile(n), ef, name="wikipedia-like")


def frequency_heuristic_scores(ds: TemporalDataset, src, dst, times):
    """Count of earlier (src, dst) interactions, a training-free link predictor.

    Used as an oracle that the planted pattern is learnable at all.
    """
    key_all = ds.src * ds.num_nodes + ds.dst
    key_q = np.asarray(src) * ds.num_nodes + np.asarray(dst)
    order = np.lexsort((ds.times, key_all))
    ks, ts = key_all[order], ds.times[order]
    lo = np.searchsorted(ks, key_q, side="left")
    hi = np.searchsorted(ks, key_q, side="right")
    # number of events with the same key and time < query time
    out = np.zeros(len(key_q), np.int64)
    for i in range(len(key_q)):
        out[i] = np.searchsorted(ts[lo[i]:hi[i]], times[i], side="left")
    return out


def write_stats(ds: TemporalDataset) -> str:
    return json.dumps(ds.stats(), sort_keys=True)
