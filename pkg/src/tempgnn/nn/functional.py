"""Forward/backward pairs for every differentiable op.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the cache and the upstream gradient and returns gradients for the
inputs and parameters, in the order documented on the function.
"""
import numpy as np


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# -- linear ------------------------------------------------------------------

def linear_forward(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w)


def linear_backward(cache, g):
    """Returns (g_x, g_w, g_b)."""
    x, w = cache
    return g @ w.T, x.T @ g, g.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, g):
    return g * mask


def dropout_forward(x, p, rng):
    if p <= 0 or rng is None:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask, g):
    return g if mask is None else g * mask


# -- time encoding -----------------------------------------------------------

def time_encode_forward(dt, omega, phi):
    """cos(omega * dt + phi) for each delta in ``dt`` -> (n, d_time)."""
    dt = np.asarray(dt, dtype=omega.dtype).reshape(-1, 1)
    arg = dt * omega + phi
    return np.cos(arg), (dt, arg, omega)


def time_encode_backward(cache, g):
    """Returns (g_dt, g_omega, g_phi)."""
    dt, arg, omega = cache
    gs = -np.sin(arg) * g
    return gs @ omega, (gs * dt).sum(axis=0), gs.sum(axis=0)


# -- layer norm ----------------------------------------------------------------

def layer_norm_forward(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(cache, g):
    """Returns (g_x, g_gain, g_bias)."""
    xhat, inv, gain = cache
    gx = g * gain
    g_in = inv * (gx - gx.mean(axis=-1, keepdims=True)
                  - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return g_in, (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0), g.reshape(-1, g.shape[-1]).sum(axis=0)


# -- recurrent cells -----------------------------------------------------------

def gru_forward(x, h, wx, wh, bx, bh):
    """GRU cell, gate blocks ordered (reset, update, candidate).

    ``h_new = (1 - z) * h + z * n``: an update gate of 1 takes the candidate.
    """
    d = h.shape[1]
    ax = x @ wx + bx
    ah = h @ wh + bh
    r = sigmoid(ax[:, :d] + ah[:, :d])
    z = sigmoid(ax[:, d:2 * d] + ah[:, d:2 * d])
    hn = ah[:, 2 * d:]
    n = np.tanh(ax[:, 2 * d:] + r * hn)
    h_new = (1.0 - z) * h + z * n
    return h_new, (x, h, wx, wh, r, z, n, hn)


def gru_backward(cache, g):
    """Returns (g_x, g_h, g_wx, g_wh, g_bx, g_bh)."""
    x, h, wx, wh, r, z, n, hn = cache
    g_n = g * z
    g_z = g * (n - h)
    g_an = g_n * (1.0 - n * n)
    g_ar = g_an * hn * r * (1.0 - r)
    g_az = g_z * z * (1.0 - z)
    gx_all = np.concatenate([g_ar, g_az, g_an], axis=1)
    gh_all = np.concatenate([g_ar, g_az, g_an * r], axis=1)
    g_x = gx_all @ wx.T
    g_h = gh_all @ wh.T + g * (1.0 - z)
    return g_x, g_h, x.T @ gx_all, h.T @ gh_all, gx_all.sum(axis=0), gh_all.sum(axis=0)


def rnn_forward(x, h, wx, wh, b):
    """Elman cell: ``tanh(x wx + h wh + b)``."""
    out = np.tanh(x @ wx + h @ wh + b)
    return out, (x, h, wx, wh, out)


def rnn_backward(cache, g):
    """Returns (g_x, g_h, g_wx, g_wh, g_b)."""
    x, h, wx, wh, out = cache
    ga = g * (1.0 - out * out)
    return ga @ wx.T, ga @ wh.T, x.T @ ga, h.T @ ga, ga.sum(axis=0)


def snapshot_combine_forward(xs, wx, wh, b):
    """Run an Elman RNN over ``xs`` (S, n, d) from oldest to newest; return the last state.

    ``xs[0]`` must be the oldest snapshot.
    """
    h = np.zeros((xs.shape[1], wh.shape[0]), dtype=xs.dtype)
    caches = []
    for x in xs:
        h, c = rnn_forward(x, h, wx, wh, b)
        caches.append(c)
    return h, caches


def snapshot_combine_backward(caches, g):
    """Returns (g_xs, g_wx, g_wh, g_b)."""
    g_xs = []
    g_wx = g_wh = g_b = 0
    for c in reversed(caches):
        gx, g, gwx, gwh, gb = rnn_backward(c, g)
        g_xs.append(gx)
        g_wx, g_wh, g_b = g_wx + gwx, g_wh + gwh, g_b + gb
    return np.stack(g_xs[::-1]), g_wx, g_wh, g_b


# -- attention -----------------------------------------------------------------

class Segments:
    """Edges grouped by destination, for reductions with ``reduceat``."""

    def __init__(self, edge_dst, n_dst):
        edge_dst = np.asarray(edge_dst, dtype=np.int64)
        if len(edge_dst) and np.any(edge_dst[1:] < edge_dst[:-1]):
            raise ValueError("edges must be grouped by destination in ascending order")
        if len(edge_dst) and (edge_dst[0] < 0 or edge_dst[-1] >= n_dst):
            raise IndexError("edge destination index out of range")
        self.edge_dst = edge_dst
        self.n_dst = n_dst
        if len(edge_dst):
            head = np.ones(len(edge_dst), dtype=bool)
            head[1:] = edge_dst[1:] != edge_dst[:-1]
            self.starts = np.flatnonzero(head)
            self.owners = edge_dst[self.starts]
        else:
            self.starts = self.owners = np.zeros(0, np.int64)

    def sum(self, x):
        out = np.zeros((self.n_dst,) + x.shape[1:], dtype=x.dtype)
        if len(self.starts):
            out[self.owners] = np.add.reduceat(x, self.starts, axis=0)
        return out

    def max(self, x):
        out = np.zeros((self.n_dst,) + x.shape[1:], dtype=x.dtype)
        if len(self.starts):
            out[self.owners] = np.maximum.reduceat(x, self.starts, axis=0)
        return out


def attention_forward(q, k, v, seg: Segments):
    """Multi-head scaled dot-product attention of each dst over its incoming edges.

    q: (n_dst, H, dh); k, v: (n_edges, H, dh). Destinations without edges get zeros.
    Returns (agg (n_dst, H, dh), cache); ``cache[0]`` holds the weights (n_edges, H).
    """
    dst = seg.edge_dst
    scale = 1.0 / np.sqrt(q.shape[-1])
    score = np.einsum("ehd,ehd->eh", q[dst], k) * scale
    score = score - seg.max(score)[dst]
    w = np.exp(score)
    alpha = w / seg.sum(w)[dst]
    agg = seg.sum(alpha[:, :, None] * v)
    return agg, (alpha, q, k, v, seg, scale)


def attention_backward(cache, g_agg):
    """Returns (g_q, g_k, g_v)."""
    alpha, q, k, v, seg, scale = cache
    dst = seg.edge_dst
    ge = g_agg[dst]  # (n_edges, H, dh)
    g_v = alpha[:, :, None] * ge
    g_alpha = np.einsum("ehd,ehd->eh", ge, v)
    g_score = alpha * (g_alpha - seg.sum(alpha * g_alpha)[dst]) * scale
    g_k = g_score[:, :, None] * q[dst]
    g_q = seg.sum(g_score[:, :, None] * k)
    return g_q, g_k, g_v


# -- loss ----------------------------------------------------------------------

def bce_with_logits_forward(logits, labels):
    """Mean binary cross-entropy."""
    z = logits
    loss = np.maximum(z, 0) - z * labels + np.log1p(np.exp(-np.abs(z)))
    return loss.mean(), (z, labels)


def bce_with_logits_backward(cache, g=1.0):
    z, labels = cache
    return g * (sigmoid(z) - labels) / z.size
