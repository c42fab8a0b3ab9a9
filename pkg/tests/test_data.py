import numpy as np
import pytest

from tempgnn.data import (RANDOM_EDGE_DIM, frequency_heuristic_scores, load_dataset, load_dataset_dir,
                          planted_dataset, wikipedia_like)
from tempgnn.errors import DatasetError
from tempgnn.metrics import average_precision


def write(path, text):
    path.write_text(text)
    return path


def test_three_row_csv(tmp_path):
    p = write(tmp_path / "e.csv", "src,dst,time,split\na,b,1,train\nb,c,2,valid\na,c,3,test\n")
    ds = load_dataset(p)
    assert ds.num_events == 3 and ds.num_nodes == 3
    assert (ds.split.train_end, ds.split.valid_end) == (1, 2)
    assert ds.graph.num_edges == 6  # stored in both directions
    assert ds.node_ids.tolist() == ["a", "b", "c"]


def test_shuffled_input_gives_identical_graph(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(int(rng.integers(0, 30)), int(rng.integers(0, 30)), int(rng.integers(0, 50)))
            for _ in range(300)]
    ef = rng.random((300, 4))
    body = lambda rs: "src,dst,time\n" + "".join(f"{s},{d},{t}\n" for s, d, t in rs)
    write(tmp_path / "a.csv", body(rows))
    np.save(tmp_path / "a.npy", ef)
    perm = rng.permutation(300)
    write(tmp_path / "b.csv", body([rows[i] for i in perm]))
    np.save(tmp_path / "b.npy", ef[perm])
    a = load_dataset(tmp_path / "a.csv", edge_feat_file=tmp_path / "a.npy")
    b = load_dataset(tmp_path / "b.csv", edge_feat_file=tmp_path / "b.npy")
    for name in ("indptr", "indices", "times", "edge_features"):
        assert np.array_equal(getattr(a.graph, name), getattr(b.graph, name))
    assert np.array_equal(a.src, b.src) and np.array_equal(a.dst, b.dst)


def test_numeric_ids_keep_order_and_split_by_quantile(tmp_path):
    rows = "".join(f"{i},{i + 100},{i}\n" for i in range(20))
    ds = load_dataset(write(tmp_path / "e.csv", "src,dst,time\n" + rows))
    assert ds.node_ids[:3].tolist() == [0, 1, 2]
    assert (ds.split.train_end, ds.split.valid_end) == (14, 17)


@pytest.mark.parametrize("text,line", [
    ("src,dst,time\n0,1,1\n0,1,soon\n", 3),
    ("src,dst,time\n0,1\n", 2),
    ("src,dst,time\n0,1,1\n0,1,-4\n", 3),
    ("src,dst\n0,1\n", 1),
    ("src,dst,time,split\n0,1,1,later\n", 2),
    ("", 1),
])
def test_malformed_rows_report_line(tmp_path, text, line):
    with pytest.raises(DatasetError) as err:
        load_dataset(write(tmp_path / "e.csv", text))
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_split_labels_must_be_chronological(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(write(tmp_path / "e.csv", "src,dst,time,split\n0,1,1,test\n0,1,2,train\n"))


def test_feature_shape_checked(tmp_path):
    write(tmp_path / "e.csv", "src,dst,time\n0,1,1\n1,2,2\n")
    np.save(tmp_path / "f.npy", np.zeros((3, 2)))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "e.csv", edge_feat_file=tmp_path / "f.npy")


def test_random_edge_features(tmp_path):
    write(tmp_path / "e.csv", "src,dst,time\n0,1,1\n1,2,2\n")
    ds = load_dataset(tmp_path / "e.csv", random_edge_features=True)
    assert ds.edge_features.shape == (2, RANDOM_EDGE_DIM)


def test_directory_round_trip(tmp_path):
    ds = planted_dataset(n_users=20, n_items=20, n_events=500, node_dim=4)
    ds.save(tmp_path / "d")
    back = load_dataset_dir(tmp_path / "d")
    assert np.array_equal(back.src, ds.src) and np.array_equal(back.times, ds.times)
    assert np.array_equal(back.node_features, ds.node_features)
    assert back.split == ds.split
    with pytest.raises(DatasetError):
        load_dataset_dir(tmp_path)


def test_wikipedia_shaped_stats():
    s = wikipedia_like().stats()
    assert s["num_nodes"] == 9227 and s["num_edges"] == 157_474
    assert s["edge_dim"] == 172 and s["max_time"] == pytest.approx(2.678e6)


def test_planted_pattern_is_learnable_by_frequency_heuristic():
    ds = planted_dataset()
    sp = ds.split
    rng = np.random.default_rng(0)
    idx = np.arange(sp.train_end, sp.valid_end)
    neg = ds.negative_pool[rng.integers(0, len(ds.negative_pool), len(idx))]
    pos_s = frequency_heuristic_scores(ds, ds.src[idx], ds.dst[idx], ds.times[idx])
    neg_s = frequency_heuristic_scores(ds, ds.src[idx], neg, ds.times[idx])
    assert average_precision(pos_s, neg_s) > 0.95
    assert 1900 <= ds.num_nodes <= 2000


def test_frequency_heuristic_counts_only_the_past():
    ds = planted_dataset(n_users=5, n_items=5, n_events=200, node_dim=2)
    i = 150
    n = frequency_heuristic_scores(ds, ds.src[[i]], ds.dst[[i]], ds.times[[i]])[0]
    ref = np.sum((ds.src == ds.src[i]) & (ds.dst == ds.dst[i]) & (ds.times < ds.times[i]))
    assert n == ref
