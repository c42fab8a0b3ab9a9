"""Config-driven temporal GNN assembled from memory, updater, aggregator and decoder.

One call to :meth:`TemporalModel.step` runs a whole mini-batch:

1. the caller samples the batch's MFGs (see :mod:`tempgnn.trainer`);
2. memory and cached mails of every involved node are looked up;
3. memory is refreshed from those mails (not yet written back);
4. attention layers run over the MFGs;
5. the link loss is computed and, when training, back-propagated;
6. refreshed memory of the positive endpoints is stored, new mails are
   generated from it and delivered.

The :class:`~tempgnn.state.BatchPhase` guard attached to the memory store and
mailbox refuses step 6 until step 4 has finished.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import state as st
from .config import ModelConfig
from .errors import DimensionError
from .nn import functional as F
from .nn.layers import (AttentionLayer, EdgeDecoder, GRUCell, LayerNorm, Linear,
                        MailAttentionUpdater, RNNCell, SnapshotCombiner, TimeEncoder,
                        TimeProjection)
from .nn.params import Adam, ParameterTape
from .sampler import SampledBatch


@dataclass
class Batch:
    src: np.ndarray
    dst: np.ndarray
    neg: np.ndarray
    times: np.ndarray
    edge_features: Optional[np.ndarray] = None
    sampled: Optional[SampledBatch] = None

    def __len__(self):
        return len(self.src)

    @property
    def roots(self):
        return np.concatenate([self.src, self.dst, self.neg])

    @property
    def root_times(self):
        return np.tile(self.times, 3)


@dataclass
class StepResult:
    loss: float
    pos_logits: np.ndarray
    neg_logits: np.ndarray


class TemporalModel:
    def __init__(self, cfg: ModelConfig, num_nodes: int, node_dim: int = 0, edge_dim: int = 0,
                 dtype=np.float32, seed: Optional[int] = None):
        self.cfg = cfg
        self.num_nodes = num_nodes
        self.node_dim = node_dim
        self.edge_dim = edge_dim
        self.dtype = np.dtype(dtype)
        m, g = cfg.memory, cfg.gnn
        seed = cfg.train.seed if seed is None else seed
        self.tape = tape = ParameterTape(dtype, seed=seed)
        self.phase = st.BatchPhase()
        self.store = self.mailbox = self.updater = self.feat_proj = None
        self.time_proj = self.mem_norm = self.combiner = None

        if m.enabled:
            mail_dim = 2 * m.dim + g.time_dim + edge_dim
            self.store = st.NodeMemoryStore(num_nodes, m.dim, dtype)
            self.mailbox = st.Mailbox(num_nodes, m.mailbox_size, mail_dim, dtype)
            self.store.guard = self.mailbox.guard = self.phase
            # mail time encodings are constants once cached, so this encoder gets no gradient
            self.mail_time = TimeEncoder(tape, "mail.time", g.time_dim)
            if m.type == "gru":
                self.updater = GRUCell(tape, "updater", mail_dim, m.dim)
            elif m.type == "rnn":
                self.updater = RNNCell(tape, "updater", mail_dim, m.dim)
            else:
                self.updater = MailAttentionUpdater(tape, "updater", m.dim, mail_dim, g.time_dim,
                                                    g.heads)
            if node_dim:
                self.feat_proj = Linear(tape, "node_proj", node_dim, m.dim)
            if m.time_projection:
                self.time_proj = TimeProjection(tape, "time_proj", m.dim)
            if g.layers == 0:
                self.mem_norm = LayerNorm(tape, "embed_norm", m.dim)
            d_in = m.dim
        else:
            d_in = node_dim

        self.layers = []
        for i in range(g.layers):
            # layers[i] consumes the MFGs of sampling layer L-1-i (innermost first)
            self.layers.append(AttentionLayer(tape, f"attn{i}", d_in if i == 0 else g.dim, edge_dim,
                                              g.time_dim, g.dim, g.heads, cfg.train.dropout))
        if cfg.sampling.n_snapshots > 1:
            self.combiner = SnapshotCombiner(tape, "snap", g.dim)
        self.embed_dim = g.dim if g.layers else m.dim
        self.decoder = EdgeDecoder(tape, "decoder", self.embed_dim, mode=g.decoder)
        tape.freeze()
        self.optimizer = Adam(tape, lr=cfg.train.lr)
        self.drop_rng = np.random.default_rng(seed + 1)
        self.training = True

    # -- state -------------------------------------------------------------------
    @property
    def has_memory(self):
        return self.store is not None

    def reset_state(self):
        if self.has_memory:
            st.reset(self.store, self.mailbox)
        self.phase.abort()

    def state_arrays(self):
        if not self.has_memory:
            return {}
        return {"memory": self.store.memory.copy(), "last_update": self.store.last_update.copy(),
                "mails": self.mailbox.mails.copy(), "mail_times": self.mailbox.times.copy(),
                "mail_count": self.mailbox.count.copy(), "mail_head": self.mailbox.head.copy()}

    # -- forward pieces ------------------------------------------------------------
    def _input_nodes(self, batch: Batch):
        """Per snapshot, the (nodes, times) rows fed to the innermost layer."""
        if not self.layers:
            return [(batch.roots, batch.root_times)]
        inner = batch.sampled.mfgs[-1]
        return [(mfg.src_nodes, mfg.src_times) for mfg in inner]

    def _memory_lookup_update(self, nodes):
        """Steps 2 and 3: refreshed memory for the unique ``nodes``."""
        m = self.cfg.memory
        if m.type == "apan":
            mails, mtimes, mask = self.mailbox.lookup(nodes)
            has = mask.any(axis=1)
            latest = np.where(mask, mtimes, -np.inf).max(axis=1)
            dt = np.where(mask, latest[:, None] - mtimes, 0.0)
            s = self.store.memory[nodes]
            new, c = self.updater.forward(s, mails, mask, dt)
            new_t = np.where(has, latest, self.store.last_update[nodes])
            return new, new_t, ("apan", c)
        payload, ev_t, has = st.combine_mails(self.mailbox, nodes, m.comb, self.store.last_update)
        new, new_t, c = st.update_memory(self.store, nodes, payload, ev_t, has, self.updater)
        return new, new_t, ("rec", c)

    def _memory_backward(self, cache, g):
        kind, c = cache
        if kind == "apan":
            self.updater.backward(c, g)
        else:
            st.update_memory_backward(self.updater, c, g)

    def _edge_feats(self, mfg):
        if not self.edge_dim:
            return None
        return self.graph_edge_features[mfg.edge_ids]

    graph_edge_features: Optional[np.ndarray] = None
    node_features: Optional[np.ndarray] = None

    def bind(self, dataset):
        """Attach dataset-level feature tables."""
        if dataset.node_dim != self.node_dim or dataset.edge_dim != self.edge_dim:
            raise DimensionError("dataset feature dimensions do not match the model")
        self.graph_edge_features = (None if dataset.graph.edge_features is None
                                    else dataset.graph.edge_features.astype(self.dtype))
        self.node_features = (None if dataset.node_features is None
                              else dataset.node_features.astype(self.dtype))
        return self

    # -- the batch ------------------------------------------------------------------
    def step(self, batch: Batch, train: bool = True) -> StepResult:
        n = len(batch)
        if self.layers and batch.sampled is None:
            raise ValueError("this model needs sampled MFGs for every batch")
        self.phase.begin()
        try:
            result = self._step(batch, n, train)
        except Exception:
            self.phase.abort()
            raise
        self.phase.end()
        return result

    def _step(self, batch, n, train):
        cfg = self.cfg
        dt = self.dtype
        rng = self.drop_rng if (train and cfg.train.dropout > 0) else None
        inputs = self._input_nodes(batch)
        sizes = [len(nodes) for nodes, _ in inputs]
        all_nodes = np.concatenate([nodes for nodes, _ in inputs])
        nf = self.node_features

        # 2-3: memory lookup and refresh
        mem_cache = feat_cache = None
        if self.has_memory:
            uniq, inv = np.unique(all_nodes, return_inverse=True)
            new, new_t, mem_cache = self._memory_lookup_update(uniq)
            self.phase.updated()
            feats, feat_cache = st.memory_input_features(
                new[inv], None if nf is None else nf[all_nodes], self.feat_proj)
        else:
            self.phase.updated()
            feats = nf[all_nodes] if nf is not None else np.zeros((len(all_nodes), 0), dt)
        feats = feats.astype(dt, copy=False)

        # 4: message passing per snapshot
        caches = []
        embeds = []
        off = 0
        for s, size in enumerate(sizes):
            h = feats[off:off + size]
            off += size
            layer_caches = []
            for i, layer in enumerate(self.layers):
                mfg = batch.sampled.mfgs[len(self.layers) - 1 - i][s]
                h, c = layer.forward(h, mfg.num_dst, mfg.edge_src, mfg.edge_dst,
                                     mfg.edge_dt, self._edge_feats(mfg), rng)
                layer_caches.append(c)
            caches.append(layer_caches)
            embeds.append(h)
        tail_cache = None
        if self.combiner is not None:
            # snapshot 0 is the most recent window; the combiner wants oldest first
            z, tail_cache = self.combiner.forward(np.stack(embeds[::-1]))
        else:
            z = embeds[0]
        tp_cache = norm_cache = None
        if not self.layers:
            if self.time_proj is not None:
                elapsed = batch.root_times - new_t[inv]
                z, tp_cache = self.time_proj.forward(z, elapsed)
            z, norm_cache = self.mem_norm.forward(z)
        self.phase.embedded()

        # 5: loss
        zu = np.concatenate([z[:n], z[:n]])
        zv = z[n:3 * n]
        logits, dec_cache = self.decoder.forward(zu, zv)
        labels = np.concatenate([np.ones(n), np.zeros(n)]).astype(dt)
        loss, loss_cache = F.bce_with_logits_forward(logits, labels)

        if train:
            self.tape.zero_grad()
            g_logits = F.bce_with_logits_backward(loss_cache).astype(dt)
            g_zu, g_zv = self.decoder.backward(dec_cache, g_logits)
            g_z = np.empty_like(z)
            g_z[:n] = g_zu[:n] + g_zu[n:]
            g_z[n:] = g_zv
            if not self.layers:
                g_z = self.mem_norm.backward(norm_cache, g_z)
                if tp_cache is not None:
                    g_z = self.time_proj.backward(tp_cache, g_z)
                g_embeds = [g_z]
            elif self.combiner is not None:
                g_embeds = list(self.combiner.backward(tail_cache, g_z))[::-1]
            else:
                g_embeds = [g_z]
            g_feats = []
            for s, layer_caches in enumerate(caches):
                g = g_embeds[s]
                for layer, c in zip(reversed(self.layers), reversed(layer_caches)):
                    g = layer.backward(c, g)
                g_feats.append(g)
            g_feats = np.concatenate(g_feats)
            if self.has_memory:
                st.memory_input_backward(self.feat_proj, feat_cache, g_feats)
                g_new = np.zeros((len(uniq), self.store.dim), dt)
                np.add.at(g_new, inv, g_feats)
                self._memory_backward(mem_cache, g_new)
            self.optimizer.step()

        # 6: write memory, then generate and deliver mails
        if self.has_memory:
            self._write_back(batch, n, uniq, new, new_t)
        return StepResult(float(loss), logits[:n].astype(np.float64), logits[n:].astype(np.float64))

    def _write_back(self, batch, n, uniq, new, new_t):
        m = self.cfg.memory
        pos = np.concatenate([batch.src, batch.dst])
        nodes = np.unique(pos)
        rows = np.searchsorted(uniq, nodes)
        self.store.write(nodes, new[rows], new_t[rows])
        mails = st.generate_mails(batch.src, batch.dst, batch.times, batch.edge_features
                                  if self.edge_dim else None, self.store, self.mail_time,
                                  per_endpoint_dt=m.mail_dt == "per_endpoint")
        neighbors = None
        if m.delivery == st.HOP1:
            mfg = batch.sampled.mfgs[0][0]
            keep = mfg.edge_dst < 2 * n  # edges of the positive endpoints (mail i belongs to root i)
            neighbors = (mfg.edge_dst[keep], mfg.src_nodes[mfg.edge_src[keep]])
        st.deliver_mails(self.mailbox, mails, m.delivery, neighbors)

    # -- parameters ---------------------------------------------------------------
    def parameters(self):
        return self.tape.flat

    def load_parameters(self, flat):
        self.tape.set_flat(flat)
