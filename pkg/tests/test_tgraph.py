import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempgnn.errors import EdgeIdError, NodeIdError, TimestampError
from tempgnn.sampler import SamplingConfig, locate_candidates
from tempgnn.tgraph import (EventKind, TCsrGraph, TemporalEdge, apply_deletions, build_tcsr,
                            load_tcsr, neighbor_slice, reset_pointers, save_tcsr)


def fig3_graph():
    # node 1 has four outgoing edges e1..e4 at t1 < t2 < t3 < t4, given out of order
    edges = [TemporalEdge(1, 3, 3.0), TemporalEdge(1, 1, 1.0), TemporalEdge(1, 4, 4.0),
             TemporalEdge(1, 2, 2.0), TemporalEdge(0, 1, 0.5)]
    return build_tcsr(edges, num_nodes=5)


def sort_and_group_oracle(src, dst, times, num_nodes):
    """Per-node lists of (time, dst) using plain Python sorting."""
    per = [[] for _ in range(num_nodes)]
    for i, (s, d, t) in enumerate(zip(src, dst, times)):
        per[s].append((t, i, d))
    return [[(t, d) for t, _, d in sorted(lst)] for lst in per]


def test_fig3_indices_in_time_order():
    g = fig3_graph()
    lo, hi = g.neighbor_slice(1)
    assert hi - lo == 4
    assert g.indices[lo:hi].tolist() == [1, 2, 3, 4]
    assert g.times[lo:hi].tolist() == [1.0, 2.0, 3.0, 4.0]
    # edge ids are positions: e1..e4 are consecutive and time ordered
    assert list(range(lo, hi)) == [1, 2, 3, 4]


def test_empty_graph():
    g = build_tcsr([], num_nodes=3)
    assert g.indptr.tolist() == [0, 0, 0, 0]
    assert g.indices.size == 0
    assert neighbor_slice(g, 2) == (0, 0)


def test_random_graph_matches_sort_oracle():
    rng = np.random.default_rng(1)
    n, m = 50, 1000
    src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
    times = rng.integers(0, 100, m).astype(float)  # plenty of ties
    g = TCsrGraph.from_arrays(src, dst, times, n)
    oracle = sort_and_group_oracle(src, dst, times, n)
    assert sum(len(x) for x in oracle) == g.num_edges == 1000
    for v in range(n):
        lo, hi = g.neighbor_slice(v)
        assert list(zip(g.times[lo:hi].tolist(), g.indices[lo:hi].tolist())) == oracle[v]
        assert np.all(np.diff(g.times[lo:hi]) >= 0)
    assert np.array_equal(g.out_degrees(), np.bincount(src, minlength=n))


def test_ties_keep_input_order():
    g = TCsrGraph.from_arrays([0, 0, 0], [5, 3, 4], [1.0, 1.0, 1.0], 6)
    assert g.indices.tolist() == [5, 3, 4]


def test_build_is_deterministic():
    rng = np.random.default_rng(3)
    src, dst, t = rng.integers(0, 20, 300), rng.integers(0, 20, 300), rng.integers(0, 5, 300)
    a = TCsrGraph.from_arrays(src, dst, t, 20)
    b = TCsrGraph.from_arrays(src, dst, t, 20)
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.times, b.times)


def test_build_errors():
    with pytest.raises(NodeIdError):
        build_tcsr([TemporalEdge(0, 7, 1.0)], num_nodes=3)
    with pytest.raises(TimestampError):
        build_tcsr([TemporalEdge(0, 1, -1.0)], num_nodes=3)
    with pytest.raises(NodeIdError):
        fig3_graph().neighbor_slice(9)


def test_isolated_node_slice_is_empty():
    g = fig3_graph()
    lo, hi = g.neighbor_slice(3)
    assert lo == hi


def test_pointer_invariants_after_build_and_reset():
    g = fig3_graph()
    g.configure_snapshots(3)
    assert g.pointers.shape == (4, 5)
    for k in range(4):
        assert np.array_equal(g.pointers[k], g.indptr[:-1])
    g.pointers[:, 1] = [2, 3, 4, 5]
    reset_pointers(g)
    assert np.array_equal(g.pointers[3], g.indptr[:-1])
    before = g.pointers.copy()
    reset_pointers(g)  # reset on a fresh graph is a no-op
    assert np.array_equal(before, g.pointers)


def test_storage_accounting():
    rng = np.random.default_rng(0)
    g = TCsrGraph.from_arrays(rng.integers(0, 30, 200), rng.integers(0, 30, 200),
                              rng.random(200), 30, n_snapshots=3)
    E, V, n = 200, 30, 3
    # indptr carries the one extra closing entry of any CSR layout
    assert g.storage_entries() == 2 * E + (n + 2) * V + 1
    assert g.valid.size == E


def test_deletions_clear_valid_bits():
    g = fig3_graph()
    cfg = SamplingConfig()
    lo, hi = g.neighbor_slice(1)
    apply_deletions(g, [])
    assert g.valid.all()
    apply_deletions(g, range(lo, hi))
    s, e = locate_candidates(g, 1, 10.0, 0, cfg)
    assert not g.valid[s:e].any()
    with pytest.raises(EdgeIdError):
        apply_deletions(g, [g.num_edges])


def test_delete_events_are_matched_to_latest_insert():
    edges = [TemporalEdge(0, 1, 1.0), TemporalEdge(0, 1, 2.0), TemporalEdge(0, 2, 2.5),
             TemporalEdge(0, 1, 3.0, event_kind=EventKind.DELETE)]
    g = build_tcsr(edges, 3)
    assert g.delete_entries.tolist() == [3]
    assert not g.valid[3]
    assert g.deletions_between(0, 3.0).tolist() == []
    assert g.deletions_between(3.0, 4.0).tolist() == [1]
    g.apply_deletions(g.deletions_between(3.0, 4.0))
    assert g.valid.tolist() == [True, False, True, False]
    g.restore_validity()
    assert g.valid.tolist() == [True, True, True, False]


def test_binary_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    g = TCsrGraph.from_arrays(rng.integers(0, 10, 60), rng.integers(0, 10, 60), rng.random(60), 10,
                              n_snapshots=2, edge_features=rng.random((60, 4)),
                              node_features=rng.random((10, 3)))
    save_tcsr(g, tmp_path / "g.bin")
    h = load_tcsr(tmp_path / "g.bin")
    for name in ("indptr", "indices", "times", "valid", "edge_features", "node_features"):
        assert np.array_equal(getattr(g, name), getattr(h, name))
    assert h.n_snapshots == 2


def test_corrupt_binary_rejected(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTAGRAPH" * 10)
    with pytest.raises(Exception):
        load_tcsr(p)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 20)), max_size=60),
       st.integers(1, 4))
def test_structure_invariants(edges, n_snap):
    src = [e[0] for e in edges]
    dst = [e[1] for e in edges]
    t = [float(e[2]) for e in edges]
    g = TCsrGraph.from_arrays(src, dst, t, 8, n_snapshots=n_snap)
    assert g.indptr[0] == 0 and g.indptr[-1] == len(edges)
    assert np.all(np.diff(g.indptr) >= 0)
    for v in range(8):
        lo, hi = g.neighbor_slice(v)
        assert np.all(np.diff(g.times[lo:hi]) >= 0)
        assert np.all((g.pointers[:, v] >= lo) & (g.pointers[:, v] <= hi))
    assert np.all(np.diff(g.pointers, axis=0) >= 0)
    # edge id order within a node follows time
    assert np.array_equal(g.source_of(np.arange(len(edges))), np.sort(np.asarray(src, dtype=int)))
