import numpy as np
import pytest

import gradcheck
from oracles import dense_attention, gru_scalar
from tempgnn.errors import DimensionError, FormatError
from tempgnn.nn import functional as F
from tempgnn.nn.layers import (AttentionLayer, EdgeDecoder, GRUCell, LayerNorm, RNNCell,
                               SnapshotCombiner, TimeEncoder)
from tempgnn.nn.params import Adam, ParameterTape, load_params, save_params


def tape64(seed=0):
    return ParameterTape(np.float64, seed=seed)


@pytest.mark.parametrize("op", sorted(gradcheck.TRIALS))
def test_finite_differences_quick(op):
    assert gradcheck.worst_error(op, 10, seed=7) <= 1e-4


# -- time encoder ---------------------------------------------------------------------

def test_time_encoding_at_zero_is_ones():
    t = tape64()
    enc = TimeEncoder(t, "te", 5)
    t.freeze()
    assert np.array_equal(enc(np.zeros(3)), np.ones((3, 5)))


def test_zero_frequency_gives_constant():
    t = tape64()
    enc = TimeEncoder(t, "te", 4)
    t.freeze()
    t[enc.omega][:] = 0
    t[enc.phi][:] = [0.1, 0.5, 1.0, 2.0]
    out = enc(np.array([0.0, 3.0, 1e6]))
    assert np.allclose(out, np.cos([0.1, 0.5, 1.0, 2.0]))


def test_time_encoding_elementwise_and_omega_gradient():
    rng = np.random.default_rng(0)
    t = tape64()
    enc = TimeEncoder(t, "te", 3)
    t.freeze()
    t.flat[:] = rng.normal(size=t.size)
    dt = rng.random(4)
    w, p = t[enc.omega], t[enc.phi]
    out, cache = enc.forward(dt)
    for i in range(4):
        for j in range(3):
            assert out[i, j] == pytest.approx(np.cos(w[j] * dt[i] + p[j]), abs=1e-15)
    t.zero_grad()
    enc.backward(cache, np.ones_like(out))
    assert np.allclose(t.grads[enc.omega], (-dt[:, None] * np.sin(dt[:, None] * w + p)).sum(0))


# -- attention -------------------------------------------------------------------------

def small_attention(d_edge=0, heads=2, seed=0):
    t = tape64(seed)
    layer = AttentionLayer(t, "a", d_node=4, d_edge=d_edge, d_time=2, d_out=4, n_heads=heads)
    t.freeze()
    return t, layer


def test_single_edge_gets_full_weight():
    rng = np.random.default_rng(0)
    q, k, v = rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 3))
    agg, (alpha, *_) = F.attention_forward(q, k, v, F.Segments([0], 1))
    assert np.allclose(alpha, 1.0) and np.allclose(agg, v)


def test_identical_keys_split_evenly():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(1, 1, 3))
    k = np.repeat(rng.normal(size=(1, 1, 3)), 2, axis=0)
    v = rng.normal(size=(2, 1, 3))
    agg, (alpha, *_) = F.attention_forward(q, k, v, F.Segments([0, 0], 1))
    assert np.allclose(alpha, 0.5) and np.allclose(agg[0], v.mean(0))


def test_attention_matches_dense_oracle_and_weights_sum_to_one():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n_dst = 5
        edge_dst = np.sort(rng.integers(0, n_dst, 30))
        q, k, v = rng.normal(size=(n_dst, 2, 4)), rng.normal(size=(30, 2, 4)), rng.normal(size=(30, 2, 4))
        seg = F.Segments(edge_dst, n_dst)
        agg, (alpha, *_) = F.attention_forward(q, k, v, seg)
        assert np.allclose(agg, dense_attention(q, k, v, edge_dst, n_dst), atol=1e-12)
        sums = seg.sum(alpha)[np.unique(edge_dst)]
        assert np.all(np.abs(sums - 1) < 1e-9)


def test_destination_without_edges_aggregates_zero():
    q = np.ones((2, 1, 2))
    k = v = np.ones((1, 1, 2))
    agg, _ = F.attention_forward(q, k, v, F.Segments([1], 2))
    assert not agg[0].any()


def test_permuting_a_nodes_edges_leaves_output_unchanged():
    rng = np.random.default_rng(3)
    t, layer = small_attention(d_edge=3)
    h = rng.normal(size=(8, 4))
    edge_src = rng.integers(0, 8, 6)
    edge_dst = np.array([0, 0, 0, 0, 1, 1])
    dt, ef = rng.random(6), rng.normal(size=(6, 3))
    out, _ = layer.forward(h, 2, edge_src, edge_dst, dt, ef)
    perm = np.array([2, 0, 3, 1, 5, 4])
    out2, _ = layer.forward(h, 2, edge_src[perm], edge_dst[perm], dt[perm], ef[perm])
    assert np.max(np.abs(out - out2)) < 1e-9


def test_zero_upstream_gradient_gives_zero_parameter_gradients():
    rng = np.random.default_rng(4)
    t, layer = small_attention()
    out, cache = layer.forward(rng.normal(size=(5, 4)), 2, np.array([2, 3, 4]), np.array([0, 0, 1]),
                               rng.random(3))
    t.zero_grad()
    g = layer.backward(cache, np.zeros_like(out))
    assert not t.grad.any() and not g.any()


def test_single_edge_value_path_by_chain_rule():
    """With one edge the aggregate is exactly the value projection, so d agg / d W_v = x_k^T G."""
    rng = np.random.default_rng(5)
    t = tape64()
    from tempgnn.nn.layers import Linear
    vproj = Linear(t, "v", 3, 2)
    t.freeze()
    xk = rng.normal(size=(1, 3))
    v, c_v = vproj.forward(xk)
    q, k = rng.normal(size=(1, 1, 2)), rng.normal(size=(1, 1, 2))
    agg, c_att = F.attention_forward(q, k, v.reshape(1, 1, 2), F.Segments([0], 1))
    G = rng.normal(size=(1, 1, 2))
    g_q, g_k, g_v = F.attention_backward(c_att, G)
    assert np.allclose(g_q, 0) and np.allclose(g_k, 0)  # the softmax of a single score is flat
    t.zero_grad()
    vproj.backward(c_v, g_v.reshape(1, 2))
    assert np.allclose(t.grads[vproj.w], xk.T @ G.reshape(1, 2))


def test_attention_rejects_misaligned_inputs():
    t, layer = small_attention(d_edge=2)
    h = np.zeros((4, 4))
    with pytest.raises(DimensionError):
        layer.forward(h, 2, np.array([9]), np.array([0]), np.zeros(1), np.zeros((1, 2)))
    with pytest.raises(DimensionError):
        layer.forward(h, 2, np.array([1]), np.array([0]), np.zeros(1), None)
    with pytest.raises(DimensionError):
        layer.forward(np.zeros((4, 3)), 2, np.array([1]), np.array([0]), np.zeros(1), np.zeros((1, 2)))
    with pytest.raises(DimensionError):
        AttentionLayer(tape64(), "bad", 4, 0, 2, d_out=5, n_heads=2)


# -- recurrent cells ----------------------------------------------------------------------

def test_saturated_update_gate_takes_candidate():
    rng = np.random.default_rng(6)
    t = tape64()
    cell = GRUCell(t, "g", 3, 2)
    t.freeze()
    t[cell.bx][2:4] = 50.0  # update-gate block
    x, h = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    out, (_, _, _, _, _, z, n, _) = cell.forward(x, h)
    assert np.allclose(z, 1.0) and np.allclose(out, n, atol=1e-12)


def test_rnn_zero_weights_gives_tanh_of_bias():
    t = tape64()
    cell = RNNCell(t, "r", 3, 2)
    t.freeze()
    t[cell.wx][:] = 0
    t[cell.wh][:] = 0
    t[cell.b][:] = [0.3, -1.0]
    out, _ = cell.forward(np.ones((2, 3)), np.ones((2, 2)))
    assert np.allclose(out, np.tanh([0.3, -1.0]))


def test_gru_matches_scalar_reference():
    rng = np.random.default_rng(7)
    t = tape64(3)
    cell = GRUCell(t, "g", 4, 3)
    t.freeze()
    for _ in range(10):
        x, h = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
        out, _ = cell.forward(x, h)
        ref = gru_scalar(x, h, t[cell.wx], t[cell.wh], t[cell.bx], t[cell.bh])
        assert np.max(np.abs(out - ref)) < 1e-10


def test_cells_reject_bad_shapes():
    t = tape64()
    g, r = GRUCell(t, "g", 4, 3), RNNCell(t, "r", 4, 3)
    t.freeze()
    for cell in (g, r):
        with pytest.raises(DimensionError):
            cell.forward(np.zeros((1, 5)), np.zeros((1, 3)))


# -- snapshot combiner -----------------------------------------------------------------------

def test_one_snapshot_is_one_cell_step():
    rng = np.random.default_rng(8)
    t = tape64()
    comb = SnapshotCombiner(t, "s", 3)
    t.freeze()
    x = rng.normal(size=(1, 4, 3))
    out, _ = comb.forward(x)
    ref, _ = comb.cell.forward(x[0], np.zeros((4, 3)))
    assert np.array_equal(out, ref)


def test_repeated_snapshots_equal_repeated_cell():
    rng = np.random.default_rng(9)
    t = tape64()
    comb = SnapshotCombiner(t, "s", 3)
    t.freeze()
    x = rng.normal(size=(2, 3))
    h = np.zeros((2, 3))
    wx, wh, b = t[comb.cell.wx], t[comb.cell.wh], t[comb.cell.b]
    for _ in range(3):
        h = np.tanh(x @ wx + h @ wh + b)
    out, _ = comb.forward(np.stack([x] * 3))
    assert np.allclose(out, h, atol=1e-14)


def test_combiner_order_matters():
    rng = np.random.default_rng(10)
    t = tape64()
    comb = SnapshotCombiner(t, "s", 3)
    t.freeze()
    xs = rng.normal(size=(3, 2, 3))
    assert not np.allclose(comb.forward(xs)[0], comb.forward(xs[::-1])[0])


# -- layer norm ---------------------------------------------------------------------------------

def test_layer_norm_constant_row_gives_bias():
    t = tape64()
    ln = LayerNorm(t, "n", 4)
    t.freeze()
    t[ln.bias][:] = [1, 2, 3, 4]
    t[ln.gain][:] = 7
    out, _ = ln.forward(np.full((2, 4), 3.3))
    assert np.allclose(out, [[1, 2, 3, 4]] * 2)


def test_layer_norm_standardizes():
    t = tape64()
    ln = LayerNorm(t, "n", 1000)
    t.freeze()
    out, _ = ln.forward(np.random.default_rng(0).normal(size=(1, 1000)))
    assert abs(out.mean()) < 1e-9 and abs(out.var() - 1) < 1e-3


# -- decoder -----------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["concat", "product"])
def test_zero_weight_decoder_outputs_bias(mode):
    t = tape64()
    dec = EdgeDecoder(t, "d", 4, mode=mode)
    t.freeze()
    t.flat[:] = 0
    t[dec.head.b][:] = 0.75
    logit, _ = dec.forward(np.ones((3, 4)), np.full((3, 4), -2.0))
    assert np.array_equal(logit, [0.75] * 3)


def test_product_decoder_is_symmetric():
    rng = np.random.default_rng(11)
    t = tape64()
    dec = EdgeDecoder(t, "d", 4, mode="product")
    t.freeze()
    zu, zv = rng.normal(size=(2, 5, 4))
    assert np.array_equal(dec.forward(zu, zv)[0], dec.forward(zv, zu)[0])


def test_decoder_rejects_mismatched_embeddings():
    t = tape64()
    dec = EdgeDecoder(t, "d", 4)
    t.freeze()
    with pytest.raises(DimensionError):
        dec.forward(np.zeros((2, 4)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        EdgeDecoder(tape64(), "x", 4, mode="dot")


def test_bce_matches_definition():
    z = np.array([-3.0, 0.0, 2.0, 40.0])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    loss, _ = F.bce_with_logits_forward(z, y)
    p = 1 / (1 + np.exp(-z[:3]))
    ref = (-(y[:3] * np.log(p) + (1 - y[:3]) * np.log(1 - p))).sum() + 40.0
    assert loss == pytest.approx(ref / 4, rel=1e-12)


# -- parameter plumbing -------------------------------------------------------------------------

def test_tape_views_share_the_flat_vector():
    t = ParameterTape(np.float32)
    a = t.zeros("a", (2, 2))
    t.ones("b", (3,))
    t.freeze()
    assert t.grad.size == t.flat.size == 7
    t.flat[:4] = 5
    assert np.all(t[a] == 5)
    t2 = ParameterTape()
    t2.add("x", [1.0])
    with pytest.raises(KeyError):
        t2.add("x", [2.0])


def test_adam_first_step_moves_by_lr():
    t = tape64()
    w = t.ones("w", (3,))
    t.freeze()
    opt = Adam(t, lr=0.1)
    t.grads[w][:] = [1.0, -2.0, 0.0]
    opt.step()
    assert np.allclose(t[w], [0.9, 1.1, 1.0])


def test_checkpoint_round_trip_and_corruption(tmp_path):
    t = tape64(3)
    t.uniform("w", (4, 4), 4)
    t.freeze()
    p = tmp_path / "m.ckpt"
    save_params(p, t, "name = x\n")
    flat, text = load_params(p)
    assert np.array_equal(flat, t.flat) and text == "name = x\n"
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 1
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_params(p)
    p.write_bytes(b"short")
    with pytest.raises(FormatError):
        load_params(p)
