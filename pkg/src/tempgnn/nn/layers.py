"""Layers with explicit caches.

``forward`` returns ``(output, cache)`` and never stores state on the layer,
so one layer can run several times per batch (e.g. once per snapshot)
before the matching ``backward`` calls. ``backward`` accumulates parameter
gradients into the tape and returns gradients for the inputs.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .params import ParameterTape
from ..errors import DimensionError


def _gather_backward(index, g_rows, n):
    out = np.zeros((n,) + g_rows.shape[1:], dtype=g_rows.dtype)
    np.add.at(out, index, g_rows)
    return out


class Linear:
    def __init__(self, tape: ParameterTape, name, d_in, d_out, bias=True):
        self.tape = tape
        self.w = tape.uniform(f"{name}.w", (d_in, d_out), d_in)
        self.b = tape.uniform(f"{name}.b", (d_out,), d_in) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"expected {self.d_in} input features, got {x.shape[-1]}")
        return F.linear_forward(x, self.tape[self.w], self.tape[self.b] if self.b else None)

    def backward(self, cache, g):
        gx, gw, gb = F.linear_backward(cache, g)
        self.tape.accumulate(self.w, gw)
        if self.b:
            self.tape.accumulate(self.b, gb)
        return gx


class TimeEncoder:
    """cos(omega * dt + phi) with omega initialised on a log scale over 1 .. 1e-9."""

    def __init__(self, tape: ParameterTape, name, dim):
        self.tape = tape
        self.dim = dim
        self.omega = tape.add(f"{name}.omega", 1.0 / 10 ** np.linspace(0, 9, dim))
        self.phi = tape.zeros(f"{name}.phi", (dim,))

    def forward(self, dt):
        return F.time_encode_forward(dt, self.tape[self.omega], self.tape[self.phi])

    def backward(self, cache, g):
        g_dt, g_w, g_phi = F.time_encode_backward(cache, g)
        self.tape.accumulate(self.omega, g_w)
        self.tape.accumulate(self.phi, g_phi)
        return g_dt

    def __call__(self, dt):
        return self.forward(dt)[0]


class LayerNorm:
    def __init__(self, tape: ParameterTape, name, dim, eps=1e-5):
        self.tape = tape
        self.gain = tape.ones(f"{name}.gain", (dim,))
        self.bias = tape.zeros(f"{name}.bias", (dim,))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm_forward(x, self.tape[self.gain], self.tape[self.bias], self.eps)

    def backward(self, cache, g):
        gx, gg, gb = F.layer_norm_backward(cache, g)
        self.tape.accumulate(self.gain, gg)
        self.tape.accumulate(self.bias, gb)
        return gx


class GRUCell:
    def __init__(self, tape: ParameterTape, name, d_in, d_hidden):
        self.tape = tape
        self.d_in, self.d_hidden = d_in, d_hidden
        self.wx = tape.uniform(f"{name}.wx", (d_in, 3 * d_hidden), d_hidden)
        self.wh = tape.uniform(f"{name}.wh", (d_hidden, 3 * d_hidden), d_hidden)
        self.bx = tape.uniform(f"{name}.bx", (3 * d_hidden,), d_hidden)
        self.bh = tape.uniform(f"{name}.bh", (3 * d_hidden,), d_hidden)

    def forward(self, x, h):
        t = self.tape
        if x.shape[-1] != self.d_in or h.shape[-1] != self.d_hidden:
            raise DimensionError("GRU input/hidden dimension mismatch")
        return F.gru_forward(x, h, t[self.wx], t[self.wh], t[self.bx], t[self.bh])

    def backward(self, cache, g):
        gx, gh, gwx, gwh, gbx, gbh = F.gru_backward(cache, g)
        for n, v in ((self.wx, gwx), (self.wh, gwh), (self.bx, gbx), (self.bh, gbh)):
            self.tape.accumulate(n, v)
        return gx, gh


class RNNCell:
    def __init__(self, tape: ParameterTape, name, d_in, d_hidden):
        self.tape = tape
        self.d_in, self.d_hidden = d_in, d_hidden
        self.wx = tape.uniform(f"{name}.wx", (d_in, d_hidden), d_hidden)
        self.wh = tape.uniform(f"{name}.wh", (d_hidden, d_hidden), d_hidden)
        self.b = tape.uniform(f"{name}.b", (d_hidden,), d_hidden)

    def forward(self, x, h):
        t = self.tape
        if x.shape[-1] != self.d_in or h.shape[-1] != self.d_hidden:
            raise DimensionError("RNN input/hidden dimension mismatch")
        return F.rnn_forward(x, h, t[self.wx], t[self.wh], t[self.b])

    def backward(self, cache, g):
        gx, gh, gwx, gwh, gb = F.rnn_backward(cache, g)
        for n, v in ((self.wx, gwx), (self.wh, gwh), (self.b, gb)):
            self.tape.accumulate(n, v)
        return gx, gh


class SnapshotCombiner:
    """Elman RNN over per-snapshot embeddings, oldest snapshot first."""

    def __init__(self, tape: ParameterTape, name, dim):
        self.cell = RNNCell(tape, name, dim, dim)

    def forward(self, xs):
        t = self.cell.tape
        return F.snapshot_combine_forward(xs, t[self.cell.wx], t[self.cell.wh], t[self.cell.b])

    def backward(self, caches, g):
        g_xs, gwx, gwh, gb = F.snapshot_combine_backward(caches, g)
        t = self.cell.tape
        t.accumulate(self.cell.wx, gwx)
        t.accumulate(self.cell.wh, gwh)
        t.accumulate(self.cell.b, gb)
        return g_xs


class AttentionLayer:
    """Temporal multi-head attention from each destination to its sampled edges.

    query  = [h_dst | Phi(0)]
    key/value = [h_src[edge_src] | edge_feat | Phi(dt)]
    out = LayerNorm(ReLU(W_o [agg | h_dst] + b_o))
    """

    def __init__(self, tape: ParameterTape, name, d_node, d_edge, d_time, d_out, n_heads=2,
                 dropout=0.0):
        if d_out % n_heads:
            raise DimensionError(f"{n_heads} heads do not divide output dimension {d_out}")
        self.tape = tape
        self.d_node, self.d_edge, self.d_time, self.d_out = d_node, d_edge, d_time, d_out
        self.n_heads = n_heads
        self.dropout = dropout
        self.time_enc = TimeEncoder(tape, f"{name}.time", d_time)
        self.q = Linear(tape, f"{name}.q", d_node + d_time, d_out)
        self.k = Linear(tape, f"{name}.k", d_node + d_edge + d_time, d_out)
        self.v = Linear(tape, f"{name}.v", d_node + d_edge + d_time, d_out)
        self.out = Linear(tape, f"{name}.out", d_out + d_node, d_out)
        self.norm = LayerNorm(tape, f"{name}.norm", d_out)

    def _heads(self, x):
        return x.reshape(x.shape[0], self.n_heads, self.d_out // self.n_heads)

    def forward(self, h_src, n_dst, edge_src, edge_dst, edge_dt, edge_feat=None, rng=None):
        h_src = np.asarray(h_src)
        n_e = len(edge_src)
        if h_src.shape[1] != self.d_node:
            raise DimensionError(f"node features have {h_src.shape[1]} columns, expected {self.d_node}")
        if n_dst > h_src.shape[0]:
            raise DimensionError("more destinations than source rows")
        if n_e and (edge_src.max() >= h_src.shape[0] or edge_src.min() < 0):
            raise DimensionError("edge source index outside the source node rows")
        if len(edge_dst) != n_e or len(edge_dt) != n_e:
            raise DimensionError("edge arrays disagree in length")
        if self.d_edge:
            if edge_feat is None or edge_feat.shape != (n_e, self.d_edge):
                raise DimensionError(f"expected edge features of shape ({n_e}, {self.d_edge})")
        dt = h_src.dtype
        h_dst = h_src[:n_dst]
        seg = F.Segments(edge_dst, n_dst)

        tq, c_tq = self.time_enc.forward(np.zeros(n_dst, dtype=dt))
        q, c_q = self.q.forward(np.concatenate([h_dst, tq.astype(dt)], axis=1))
        te, c_te = self.time_enc.forward(edge_dt)
        parts = [h_src[edge_src]]
        if self.d_edge:
            parts.append(edge_feat.astype(dt, copy=False))
        parts.append(te.astype(dt))
        xk = np.concatenate(parts, axis=1)
        k, c_k = self.k.forward(xk)
        v, c_v = self.v.forward(xk)
        agg, c_att = F.attention_forward(self._heads(q), self._heads(k), self._heads(v), seg)
        agg = agg.reshape(n_dst, self.d_out)
        agg, c_drop = F.dropout_forward(agg, self.dropout, rng)
        o, c_o = self.out.forward(np.concatenate([agg, h_dst], axis=1))
        o, c_relu = F.relu_forward(o)
        y, c_norm = self.norm.forward(o)
        cache = (h_src.shape[0], n_dst, edge_src, c_tq, c_q, c_te, c_k, c_v, c_att, c_drop, c_o,
                 c_relu, c_norm)
        return y, cache

    def backward(self, cache, g):
        """Returns the gradient with respect to ``h_src``."""
        (n_src, n_dst, edge_src, c_tq, c_q, c_te, c_k, c_v, c_att, c_drop, c_o,
         c_relu, c_norm) = cache
        d = self.d_node
        g = self.norm.backward(c_norm, g)
        g = F.relu_backward(c_relu, g)
        g_cat = self.out.backward(c_o, g)
        g_agg = F.dropout_backward(c_drop, g_cat[:, :self.d_out])
        g_h_src = np.zeros((n_src, d), dtype=g.dtype)
        g_h_src[:n_dst] += g_cat[:, self.d_out:]
        g_q, g_k, g_v = F.attention_backward(c_att, self._heads(g_agg))
        g_xk = (self.k.backward(c_k, g_k.reshape(len(g_k), self.d_out))
                + self.v.backward(c_v, g_v.reshape(len(g_v), self.d_out)))
        np.add.at(g_h_src, edge_src, g_xk[:, :d])
        self.time_enc.backward(c_te, g_xk[:, d + self.d_edge:])
        g_xq = self.q.backward(c_q, g_q.reshape(n_dst, -1))
        g_h_src[:n_dst] += g_xq[:, :d]
        self.time_enc.backward(c_tq, g_xq[:, d:])
        return g_h_src


class MailAttentionUpdater:
    """Memory updater attending over all stored mails of a node.

    s_new = LayerNorm(s + W_o attn(q = s, k/v = [mail | Phi(t - mail_time)]))
    Rows without any mail keep their previous memory.
    """

    def __init__(self, tape: ParameterTape, name, d_mem, d_mail, d_time, n_heads=2):
        self.tape = tape
        self.d_mem = d_mem
        self.n_heads = n_heads
        self.time_enc = TimeEncoder(tape, f"{name}.time", d_time)
        self.q = Linear(tape, f"{name}.q", d_mem, d_mem)
        self.k = Linear(tape, f"{name}.k", d_mail + d_time, d_mem)
        self.v = Linear(tape, f"{name}.v", d_mail + d_time, d_mem)
        self.out = Linear(tape, f"{name}.out", d_mem, d_mem)
        self.norm = LayerNorm(tape, f"{name}.norm", d_mem)

    def forward(self, s, mails, mask, dt):
        """s: (n, d_mem); mails: (n, K, d_mail); mask, dt: (n, K)."""
        n, K = mask.shape
        rows, slots = np.nonzero(mask)
        seg = F.Segments(rows, n)
        te, c_te = self.time_enc.forward(dt[rows, slots])
        xk = np.concatenate([mails[rows, slots], te.astype(s.dtype)], axis=1)
        q, c_q = self.q.forward(s)
        k, c_k = self.k.forward(xk)
        v, c_v = self.v.forward(xk)
        H, dh = self.n_heads, self.d_mem // self.n_heads
        agg, c_att = F.attention_forward(q.reshape(n, H, dh), k.reshape(len(rows), H, dh),
                                         v.reshape(len(rows), H, dh), seg)
        o, c_o = self.out.forward(agg.reshape(n, -1))
        y, c_norm = self.norm.forward(s + o)
        has = mask.any(axis=1)
        y = np.where(has[:, None], y, s)
        return y, (has, c_te, c_q, c_k, c_v, c_att, c_o, c_norm, n)

    def backward(self, cache, g):
        """Returns the gradient with respect to ``s``."""
        has, c_te, c_q, c_k, c_v, c_att, c_o, c_norm, n = cache
        g_keep = g * (~has)[:, None]
        g = g * has[:, None]
        g_sum = self.norm.backward(c_norm, g)
        g_agg = self.out.backward(c_o, g_sum)
        H, dh = self.n_heads, self.d_mem // self.n_heads
        g_q, g_k, g_v = F.attention_backward(c_att, g_agg.reshape(n, H, dh))
        g_xk = (self.k.backward(c_k, g_k.reshape(len(g_k), H * dh))
                + self.v.backward(c_v, g_v.reshape(len(g_v), H * dh)))
        self.time_enc.backward(c_te, g_xk[:, -self.time_enc.dim:])
        return g_sum + self.q.backward(c_q, g_q.reshape(n, -1)) + g_keep


class TimeProjection:
    """Memory drift with elapsed time: ``s * (1 + w * log1p(dt))``."""

    def __init__(self, tape: ParameterTape, name, dim):
        self.tape = tape
        self.w = tape.uniform(f"{name}.w", (dim,), dim * 100)

    def forward(self, s, dt):
        ld = np.log1p(np.maximum(np.asarray(dt, dtype=s.dtype), 0)).reshape(-1, 1)
        scale = 1.0 + ld * self.tape[self.w]
        return s * scale, (s, ld, scale)

    def backward(self, cache, g):
        s, ld, scale = cache
        self.tape.accumulate(self.w, (g * s * ld).sum(axis=0))
        return g * scale


class EdgeDecoder:
    """Link logit from a pair of embeddings.

    ``concat``: ReLU(z_u W_s + z_v W_d + b) w + c (an MLP over [z_u | z_v]).
    ``product``: ReLU((z_u * z_v) W + b) w + c, symmetric in its arguments.
    """

    def __init__(self, tape: ParameterTape, name, dim, hidden=None, mode="concat"):
        if mode not in ("concat", "product"):
            raise ValueError(f"unknown decoder mode {mode!r}")
        hidden = hidden or dim
        self.mode = mode
        self.dim = dim
        self.src = Linear(tape, f"{name}.src", dim, hidden)
        self.dst = Linear(tape, f"{name}.dst", dim, hidden, bias=False) if mode == "concat" else None
        self.head = Linear(tape, f"{name}.head", hidden, 1)

    def forward(self, zu, zv):
        if zu.shape != zv.shape or zu.shape[-1] != self.dim:
            raise DimensionError("decoder expects two embedding matrices of equal shape")
        if self.mode == "concat":
            a, c1 = self.src.forward(zu)
            b, c2 = self.dst.forward(zv)
            h = a + b
            cin = (c1, c2)
        else:
            h, c1 = self.src.forward(zu * zv)
            cin = (c1, zu, zv)
        h, c_relu = F.relu_forward(h)
        logit, c_head = self.head.forward(h)
        return logit[:, 0], (cin, c_relu, c_head)

    def backward(self, cache, g):
        """Returns (g_zu, g_zv)."""
        cin, c_relu, c_head = cache
        gh = self.head.backward(c_head, g[:, None])
        gh = F.relu_backward(c_relu, gh)
        if self.mode == "concat":
            c1, c2 = cin
            return self.src.backward(c1, gh), self.dst.backward(c2, gh)
        c1, zu, zv = cin
        gp = self.src.backward(c1, gh)
        return gp * zv, gp * zu
