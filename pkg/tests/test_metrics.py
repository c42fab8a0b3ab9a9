import numpy as np
import pytest

from oracles import rank_average_precision
from tempgnn.metrics import average_precision


def test_perfect_scores():
    assert average_precision([3, 2, 5], [0, -1, 1]) == 1.0


def test_constant_scores_give_half_for_balanced_labels():
    assert average_precision(np.zeros(50), np.zeros(50)) == pytest.approx(0.5)


def test_matches_rank_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pos = rng.integers(0, 6, int(rng.integers(1, 20))).astype(float)  # heavy ties
        neg = rng.integers(0, 6, int(rng.integers(1, 20))).astype(float)
        assert average_precision(pos, neg) == pytest.approx(rank_average_precision(pos, neg), abs=1e-12)


def test_small_fixture_by_hand():
    # ranking: p(0.9) n(0.8) p(0.7) n(0.2): precision at each positive = 1, 2/3
    assert average_precision([0.9, 0.7], [0.8, 0.2]) == pytest.approx((1 + 2 / 3) / 2)


def test_needs_a_positive():
    with pytest.raises(ValueError):
        average_precision([], [1.0])
