import numpy as np
import pytest
from scipy.stats import chisquare

from oracles import dependency_oracle
from tempgnn.errors import ScheduleError
from tempgnn.sched import dependency_stats, fixed_schedule, make_epoch_schedule, sample_negatives


def test_chunk_equal_to_batch_is_fixed_schedule():
    rng = np.random.default_rng(0)
    first = make_epoch_schedule(10_000, 600, 600, rng)
    for _ in range(20):
        s = make_epoch_schedule(10_000, 600, 600, rng)
        assert s.epoch_start_offset == 0 and s.batches == first.batches


def test_sixteen_chunks_offsets():
    rng = np.random.default_rng(1)
    seen = {make_epoch_schedule(110_232, 4800, 300, rng).epoch_start_offset for _ in range(2000)}
    assert seen == set(range(0, 4800, 300))


def test_schedule_structure():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = make_epoch_schedule(1000, 64, 8, rng)
        assert s.epoch_start_offset % 8 == 0 and s.epoch_start_offset < 64
        assert s.batches[0][0] == s.epoch_start_offset
        for (a, b), (c, _) in zip(s.batches, s.batches[1:]):
            assert b - a == 64 and c == b
        assert s.batches[-1][1] <= 1000 < s.batches[-1][1] + 64


def test_offset_frequencies_uniform():
    rng = np.random.default_rng(3)
    offs = [make_epoch_schedule(5000, 160, 10, rng).epoch_start_offset // 10 for _ in range(20_000)]
    counts = np.bincount(offs, minlength=16)
    assert chisquare(counts).pvalue > 0.001


def test_every_chunk_boundary_is_a_batch_boundary_for_some_offset():
    bs, cs, n = 40, 10, 400
    starts = set()
    rng = np.random.default_rng(4)
    for _ in range(200):
        starts |= {a for a, _ in make_epoch_schedule(n, bs, cs, rng).batches}
    assert set(range(0, n - bs + 1, cs)) <= starts


def test_schedule_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ScheduleError):
        make_epoch_schedule(1000, 600, 250, rng)
    with pytest.raises(ScheduleError):
        make_epoch_schedule(100, 600, 600, rng)
    with pytest.raises(ScheduleError):
        make_epoch_schedule(100, 0, 1, rng)


def test_dump_format():
    s = make_epoch_schedule(10, 4, 2, np.random.default_rng(0))
    lines = s.dumps().splitlines()
    assert [tuple(map(int, ln.split(","))) for ln in lines] == s.batches


def test_fixed_schedule_keeps_tail():
    s = fixed_schedule(10, 4, start=1)
    assert s.batches == [(1, 5), (5, 9), (9, 10)]
    assert fixed_schedule(10, 4, keep_partial=False).batches == [(0, 4), (4, 8)]


def test_negatives_avoid_true_destination():
    rng = np.random.default_rng(5)
    pos = rng.integers(0, 3, 500)
    neg = sample_negatives(pos, np.arange(3), rng)
    assert len(neg) == 500 and not np.any(neg == pos)
    with pytest.raises(ScheduleError):
        sample_negatives(pos, np.array([1]), rng)


# -- dependencies -------------------------------------------------------------------------

def test_disjoint_edges_have_no_dependencies():
    s = dependency_stats([(0, 3)], [0, 2, 4], [1, 3, 5])
    assert (s.intra_count, s.inter_count) == (0, 0)


def test_two_edges_sharing_a_node():
    src, dst = [0, 0], [1, 2]
    s = dependency_stats([(0, 2)], src, dst)
    assert (s.intra_count, s.inter_count) == (1, 0)
    s = dependency_stats([(0, 1), (1, 2)], src, dst)
    assert (s.intra_count, s.inter_count) == (0, 1)


def test_parallel_edges_and_self_loops_count_once():
    s = dependency_stats([(0, 3)], [0, 1, 2], [1, 0, 2])
    assert s.total_dependent_pairs == 1
    assert dependency_oracle([(0, 3)], [0, 1, 2], [1, 0, 2]) == (1, 0)


def test_matches_exhaustive_oracle_and_total_is_invariant():
    rng = np.random.default_rng(6)
    for _ in range(10):
        n = 120
        src, dst = rng.integers(0, 25, n), rng.integers(0, 25, n)
        totals = set()
        for bs in (5, 10, 20, 40):
            batches = fixed_schedule(n, bs).batches
            s = dependency_stats(batches, src, dst)
            assert (s.intra_count, s.inter_count) == dependency_oracle(batches, src, dst)
            totals.add(s.total_dependent_pairs)
        assert len(totals) == 1


def test_larger_nested_batches_keep_more_intra_pairs():
    rng = np.random.default_rng(7)
    src, dst = rng.integers(0, 40, 400), rng.integers(0, 40, 400)
    intra = [dependency_stats(fixed_schedule(400, bs).batches, src, dst).intra_count
             for bs in (25, 50, 100, 200, 400)]
    assert intra == sorted(intra)


def test_only_scheduled_edges_count():
    s = dependency_stats([(1, 3)], [0, 0, 0, 0], [1, 2, 3, 4])
    assert s.total_dependent_pairs == 1
