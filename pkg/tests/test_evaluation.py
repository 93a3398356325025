"""Relative-drop metrics, mean rank, and rank correlation."""
import numpy as np
import pytest

from autoscale import (
    TaskScore,
    delta_m,
    delta_m_deg,
    mean_rank,
    spearman_correlation,
)


# ---------------------------------------------------------------------------
# TaskScore and oriented deltas
# ---------------------------------------------------------------------------

def test_task_score_validation():
    TaskScore(1.0, 2.0)
    with pytest.raises(ValueError):
        TaskScore(1.0, 0.0)
    with pytest.raises(ValueError):
        TaskScore(np.nan, 1.0)
    with pytest.raises(ValueError):
        TaskScore(1.0, np.inf)


def test_oriented_delta_sign_convention():
    # lower-better: going up is a degradation (positive)
    assert TaskScore(1.1, 1.0).oriented_delta_pct == pytest.approx(10.0)
    # higher-better: going up is an improvement (negative)
    assert TaskScore(1.1, 1.0, higher_is_better=True).oriented_delta_pct == \
        pytest.approx(-10.0)


# ---------------------------------------------------------------------------
# delta_m / delta_m_deg
# ---------------------------------------------------------------------------

def test_delta_m_zero_at_baseline():
    scores = [TaskScore(2.0, 2.0), TaskScore(0.5, 0.5, higher_is_better=True)]
    assert delta_m(scores) == 0.0


def test_delta_m_single_improved_task():
    assert delta_m([TaskScore(1.1, 1.0, higher_is_better=True)]) == \
        pytest.approx(-10.0)


def test_delta_m_mixed_example():
    scores = [TaskScore(1.1, 1.0), TaskScore(1.8, 2.0)]
    assert delta_m(scores) == pytest.approx(0.0, abs=1e-12)


def test_delta_m_improving_one_task_decreases_it():
    scores = [TaskScore(1.1, 1.0), TaskScore(1.8, 2.0)]
    better = [TaskScore(1.05, 1.0), TaskScore(1.8, 2.0)]
    assert delta_m(better) < delta_m(scores)


def test_delta_m_deg_examples():
    assert delta_m_deg([TaskScore(0.9, 1.0), TaskScore(1.9, 2.0)]) == 0.0
    # signed per-task drops (+5, -3) -> only the degradation counts
    scores = [TaskScore(1.05, 1.0), TaskScore(0.97, 1.0)]
    assert delta_m_deg(scores) == pytest.approx(5.0, abs=1e-12)
    # (+2, +3, -10) -> 5, summed not averaged
    scores = [TaskScore(1.02, 1.0), TaskScore(1.03, 1.0), TaskScore(0.90, 1.0)]
    assert delta_m_deg(scores) == pytest.approx(5.0, abs=1e-12)


def test_delta_metrics_need_scores():
    with pytest.raises(ValueError):
        delta_m([])
    with pytest.raises(ValueError):
        delta_m_deg([])


def test_delta_identity_on_random_scores():
    """K * delta_m == delta_m_deg - (negative-part sum), checked exactly."""
    rng = np.random.default_rng(123)
    for _ in range(200):
        k = int(rng.integers(1, 8))
        scores = [TaskScore(float(rng.uniform(0.1, 3.0)),
                            float(rng.uniform(0.1, 3.0)),
                            higher_is_better=bool(rng.integers(2)))
                  for _ in range(k)]
        deltas = np.array([s.oriented_delta_pct for s in scores])
        neg_sum = float(np.maximum(-deltas, 0.0).sum())
        lhs = k * delta_m(scores)
        rhs = delta_m_deg(scores) - neg_sum
        assert lhs == pytest.approx(rhs, abs=1e-10)


# ---------------------------------------------------------------------------
# mean rank
# ---------------------------------------------------------------------------

def test_mean_rank_worked_example():
    # method 0 is best on task 0, worst on task 1: ranks (1, 2) -> MR 1.5
    table = [[1.0, 2.0], [2.0, 1.0]]
    mr = mean_rank(table, [False, False])
    assert mr == pytest.approx([1.5, 1.5], abs=0)


def test_mean_rank_dominating_method():
    table = [[1.0, 1.0, 1.0], [2.0, 3.0, 2.0], [3.0, 2.0, 3.0]]
    mr = mean_rank(table, [False, False, False])
    assert mr[0] == 1.0
    assert mr.tolist() == [1.0, 7.0 / 3.0, 8.0 / 3.0]


def test_mean_rank_tie_convention():
    table = [[1.0], [1.0], [2.0]]
    mr = mean_rank(table, [False])
    assert mr == pytest.approx([1.5, 1.5, 3.0], abs=0)


def test_mean_rank_orientation():
    table = [[0.9, 10.0], [0.5, 2.0]]
    # task 0 higher-better (method 0 wins), task 1 lower-better (method 1 wins)
    mr = mean_rank(table, [True, False])
    assert mr == pytest.approx([1.5, 1.5], abs=0)
    flipped = mean_rank(table, [False, False])
    assert flipped == pytest.approx([2.0, 1.0], abs=0)


def test_mean_rank_monotone_rescale_invariance():
    rng = np.random.default_rng(4)
    table = rng.uniform(0.0, 1.0, size=(5, 4))
    orient = [False, True, False, True]
    base = mean_rank(table, orient)
    rescaled = np.column_stack([np.exp(table[:, 0]),
                                3.0 * table[:, 1] + 7.0,
                                table[:, 2] ** 3,
                                np.tan(table[:, 3])])
    assert np.array_equal(mean_rank(rescaled, orient), base)


def test_mean_rank_validation():
    with pytest.raises(ValueError):
        mean_rank(np.ones(3), [False])
    with pytest.raises(ValueError):
        mean_rank([[1.0, 2.0]], [False])              # orientation mismatch
    with pytest.raises(ValueError):
        mean_rank([[np.inf, 1.0]], [False, False])


# ---------------------------------------------------------------------------
# rank correlation
# ---------------------------------------------------------------------------

def test_spearman_monotone_limits():
    x = np.array([1.0, 2.0, 5.0, 9.0])
    assert spearman_correlation(x, np.exp(x)) == pytest.approx(1.0, abs=0)
    assert spearman_correlation(x, -(x ** 3)) == pytest.approx(-1.0, abs=0)


def test_spearman_hand_example():
    assert spearman_correlation([1.0, 2.0, 3.0], [2.0, 1.0, 3.0]) == \
        pytest.approx(0.5, abs=1e-12)


def test_spearman_validation():
    with pytest.raises(ValueError):
        spearman_correlation([1.0, 2.0], [1.0])       # length mismatch
    with pytest.raises(ValueError):
        spearman_correlation([1.0], [1.0])            # too short
    with pytest.raises(ValueError):
        spearman_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])   # constant
    with pytest.raises(ValueError):
        spearman_correlation([1.0, np.nan, 3.0], [1.0, 2.0, 3.0])
