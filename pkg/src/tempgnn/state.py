"""Node memory, mailbox and the per-batch update discipline.

Within one batch the order is fixed: look up memory and cached mails,
update memory from those mails, run message passing, compute embeddings,
and only then write memory and new mails back. :class:`BatchPhase` tracks
this order and refuses mailbox writes that come too early, which is what
keeps a batch's own edges out of its inputs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, FormatError, PhaseError

ENDPOINTS = "endpoints"
HOP1 = "hop1_neighbors"
COMB_RECENT = "most_recent"
COMB_MEAN = "mean"


class Phase(enum.IntEnum):
    IDLE = 0
    LOOKUP = 1      # memory and mailbox read for the batch's nodes
    UPDATED = 2     # memory refreshed from cached mails
    EMBEDDED = 3    # message passing done, embeddings and loss available


class BatchPhase:
    """Guards the per-batch step order."""

    def __init__(self):
        self.phase = Phase.IDLE

    def _move(self, expected, new):
        if self.phase != expected:
            raise PhaseError(f"cannot enter {new.name} from {self.phase.name} (expected {expected.name})")
        self.phase = new

    def begin(self):
        self._move(Phase.IDLE, Phase.LOOKUP)

    def updated(self):
        self._move(Phase.LOOKUP, Phase.UPDATED)

    def embedded(self):
        self._move(Phase.UPDATED, Phase.EMBEDDED)

    def end(self):
        self._move(Phase.EMBEDDED, Phase.IDLE)

    def require(self, phase, action):
        if self.phase != phase:
            raise PhaseError(f"{action} requires phase {phase.name}, current phase is {self.phase.name}")

    def abort(self):
        self.phase = Phase.IDLE


class NodeMemoryStore:
    def __init__(self, num_nodes, dim, dtype=np.float32):
        self.memory = np.zeros((num_nodes, dim), dtype=dtype)
        self.last_update = np.zeros(num_nodes, dtype=np.float64)
        self.guard: Optional[BatchPhase] = None

    @property
    def dim(self):
        return self.memory.shape[1]

    @property
    def num_nodes(self):
        return self.memory.shape[0]

    def write(self, nodes, memory, times):
        if self.guard is not None:
            self.guard.require(Phase.EMBEDDED, "memory write")
        self.memory[nodes] = memory
        self.last_update[nodes] = times

    def reset(self):
        self.memory[:] = 0
        self.last_update[:] = 0


class Mailbox:
    """Per-node ring buffer of the ``capacity`` most recent mails."""

    def __init__(self, num_nodes, capacity, mail_dim, dtype=np.float32):
        if capacity < 1:
            raise ValueError("mailbox capacity must be >= 1")
        self.capacity = capacity
        self.mail_dim = mail_dim
        self.mails = np.zeros((num_nodes, capacity, mail_dim), dtype=dtype)
        self.times = np.zeros((num_nodes, capacity), dtype=np.float64)
        self.count = np.zeros(num_nodes, dtype=np.int64)
        self.head = np.zeros(num_nodes, dtype=np.int64)  # next slot to write
        self.guard: Optional[BatchPhase] = None

    @property
    def num_nodes(self):
        return self.count.shape[0]

    def reset(self):
        self.mails[:] = 0
        self.times[:] = 0
        self.count[:] = 0
        self.head[:] = 0

    def slot_order(self, nodes):
        """Slot indices (n, K) oldest to newest, plus validity mask (n, K)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        K = self.capacity
        cnt = self.count[nodes]
        j = np.arange(K)[None, :]
        slots = (self.head[nodes][:, None] - cnt[:, None] + j) % K
        return slots, j < cnt[:, None]

    def ordered(self, node):
        """(mails, times) currently held by ``node``, oldest first."""
        slots, mask = self.slot_order([node])
        s = slots[0][mask[0]]
        return self.mails[node, s], self.times[node, s]

    def lookup(self, nodes):
        """Mails (n, K, d), times (n, K) and mask (n, K), oldest first."""
        nodes = np.asarray(nodes, dtype=np.int64)
        slots, mask = self.slot_order(nodes)
        rows = nodes[:, None]
        return self.mails[rows, slots], self.times[rows, slots], mask


@dataclass
class Mails:
    nodes: np.ndarray     # recipient of each mail
    payload: np.ndarray   # (n, 2*d_mem + d_time + d_edge)
    times: np.ndarray
    direction: np.ndarray  # 0: source-view mail, 1: destination-view mail

    def __len__(self):
        return len(self.nodes)


def generate_mails(src, dst, times, edge_feats, store: NodeMemoryStore, time_encoder,
                   per_endpoint_dt=False) -> Mails:
    """Two mails per interaction, built from the memory currently held in ``store``.

    The source-view mail is ``[s_src | s_dst | Phi(t - t_last) | e]`` and the
    destination-view mail swaps the two memories. ``t_last`` is the
    destination's last update time for both mails; ``per_endpoint_dt`` uses
    each recipient's own last update time instead.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    n = len(src)
    dtype = store.memory.dtype
    if edge_feats is None:
        edge_feats = np.zeros((n, 0), dtype=dtype)
    edge_feats = np.asarray(edge_feats)
    if edge_feats.ndim != 2 or edge_feats.shape[0] != n:
        raise DimensionError(f"edge features must be ({n}, d_edge), got {edge_feats.shape}")
    s_src, s_dst = store.memory[src], store.memory[dst]
    dt_dst = times - store.last_update[dst]
    dt_src = times - store.last_update[src] if per_endpoint_dt else dt_dst
    phi_src = np.asarray(time_encoder(dt_src), dtype=dtype)
    phi_dst = phi_src if not per_endpoint_dt else np.asarray(time_encoder(dt_dst), dtype=dtype)
    ef = edge_feats.astype(dtype, copy=False)
    m_src = np.concatenate([s_src, s_dst, phi_src, ef], axis=1)
    m_dst = np.concatenate([s_dst, s_src, phi_dst, ef], axis=1)
    return Mails(
        nodes=np.concatenate([src, dst]),
        payload=np.concatenate([m_src, m_dst]),
        times=np.concatenate([times, times]),
        direction=np.repeat(np.array([0, 1], dtype=np.int8), n),
    )


def deliver_mails(mailbox: Mailbox, mails: Mails, policy: str = ENDPOINTS, neighbors=None):
    """Append mails to recipients' rings, evicting oldest first.

    With ``policy == "hop1_neighbors"``, ``neighbors`` maps each mail index to
    extra recipients as a pair ``(mail_index, node)`` of arrays; every mail
    goes to its own node plus those neighbors.
    """
    if mailbox.guard is not None:
        mailbox.guard.require(Phase.EMBEDDED, "mailbox write")
    if mails.payload.shape[1] != mailbox.mail_dim:
        raise DimensionError(f"mail dimension {mails.payload.shape[1]} != mailbox {mailbox.mail_dim}")
    idx = np.arange(len(mails))
    targets = mails.nodes
    if policy == HOP1:
        if neighbors is None:
            raise ValueError("hop1_neighbors delivery needs sampled neighbors")
        m_idx, nb = neighbors
        idx = np.concatenate([idx, np.asarray(m_idx, dtype=np.int64)])
        targets = np.concatenate([targets, np.asarray(nb, dtype=np.int64)])
    elif policy != ENDPOINTS:
        raise ValueError(f"unknown delivery policy {policy!r}")
    if len(idx) == 0:
        return
    t = mails.times[idx]
    order = np.lexsort((np.arange(len(idx)), t, targets))
    targets, idx = targets[order], idx[order]
    head_mask = np.ones(len(targets), dtype=bool)
    head_mask[1:] = targets[1:] != targets[:-1]
    starts = np.flatnonzero(head_mask)
    group = np.cumsum(head_mask) - 1
    sizes = np.diff(np.append(starts, len(targets)))
    rank = np.arange(len(targets)) - starts[group]
    K = mailbox.capacity
    keep = rank >= sizes[group] - K  # only the last K of each group survive
    tg, ix, rk = targets[keep], idx[keep], rank[keep]
    slot = (mailbox.head[tg] + rk) % K
    mailbox.mails[tg, slot] = mails.payload[ix]
    mailbox.times[tg, slot] = mails.times[ix]
    uniq = targets[starts]
    mailbox.head[uniq] = (mailbox.head[uniq] + sizes) % K
    mailbox.count[uniq] = np.minimum(mailbox.count[uniq] + sizes, K)


def combine_mails(mailbox: Mailbox, nodes, comb: str = COMB_RECENT, last_update=None):
    """Collapse each node's stored mails into one payload.

    Returns ``(payload (n, d), event_time (n,), has_mail (n,))``. Nodes with
    no mail get a zero payload and their ``last_update`` time.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    mails, times, mask = mailbox.lookup(nodes)
    has = mask.any(axis=1)
    if comb == COMB_RECENT:
        # ring order is chronological, ties already broken by arrival
        pos = np.where(has, mask.sum(axis=1) - 1, 0)
        payload = mails[np.arange(len(nodes)), pos] * has[:, None]
        t = times[np.arange(len(nodes)), pos]
    elif comb == COMB_MEAN:
        cnt = np.maximum(mask.sum(axis=1), 1)
        payload = (mails * mask[:, :, None]).sum(axis=1) / cnt[:, None]
        t = np.where(mask, times, -np.inf).max(axis=1)
    else:
        raise ValueError(f"unknown combiner {comb!r}")
    base = np.zeros(len(nodes)) if last_update is None else np.asarray(last_update)[nodes]
    t = np.where(has, t, base)
    return payload.astype(mailbox.mails.dtype, copy=False), t, has


def update_memory(store: NodeMemoryStore, nodes, payload, event_time, has_mail, updater,
                  write=False):
    """Apply the memory updater to ``nodes`` with their combined mails.

    Returns ``(new_memory, new_last_update, cache)``; ``cache`` feeds
    :func:`update_memory_backward`. Nodes without mail keep their memory.
    With ``write`` the result is stored immediately; the trainer instead
    writes back only after the batch's embeddings are computed.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    s = store.memory[nodes]
    out, c = updater.forward(payload, s)
    new = np.where(has_mail[:, None], out, s)
    new_t = np.where(has_mail, event_time, store.last_update[nodes])
    if write:
        store.memory[nodes] = new
        store.last_update[nodes] = new_t
    return new, new_t, (c, has_mail)


def update_memory_backward(updater, cache, g):
    """Parameter gradients of :func:`update_memory` (stored memory and mails are constants)."""
    c, has = cache
    if has.any():
        updater.backward(c, g * has[:, None])


def memory_input_features(memory, node_features=None, mlp=None):
    """``s + MLP(v)`` per node, or just ``s`` for featureless graphs. Returns (features, cache)."""
    if node_features is None or mlp is None:
        return memory, None
    if len(node_features) != len(memory):
        raise DimensionError("memory and node feature rows differ")
    proj, c = mlp.forward(node_features)
    if proj.shape != memory.shape:
        raise DimensionError(f"projected features {proj.shape} do not match memory {memory.shape}")
    return memory + proj, c


def memory_input_backward(mlp, cache, g):
    if cache is not None:
        mlp.backward(cache, g)
    return g


def reset(store: NodeMemoryStore, mailbox: Optional[Mailbox]):
    store.reset()
    if mailbox is not None:
        mailbox.reset()


# -- checkpoint --------------------------------------------------------------
STATE_VERSION = 1


def save_state(path, store: NodeMemoryStore, mailbox: Optional[Mailbox]):
    arrays = dict(version=np.array(STATE_VERSION), memory=store.memory,
                  last_update=store.last_update)
    if mailbox is not None:
        arrays.update(mails=mailbox.mails, mail_times=mailbox.times,
                      mail_count=mailbox.count, mail_head=mailbox.head)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_state(path, store: NodeMemoryStore, mailbox: Optional[Mailbox]):
    with np.load(path) as z:
        if "version" not in z or int(z["version"]) != STATE_VERSION:
            raise FormatError("unsupported memory checkpoint version")
        if z["memory"].shape != store.memory.shape:
            raise FormatError("memory shape mismatch")
        store.memory[:] = z["memory"]
        store.last_update[:] = z["last_update"]
        if mailbox is not None:
            if "mails" not in z or z["mails"].shape != mailbox.mails.shape:
                raise FormatError("mailbox shape mismatch")
            mailbox.mails[:] = z["mails"]
            mailbox.times[:] = z["mail_times"]
            mailbox.count[:] = z["mail_count"]
            mailbox.head[:] = z["mail_head"]
