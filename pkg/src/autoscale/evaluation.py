"""Cross-method comparison metrics.

Per-task relative deltas against a reference score, aggregated three ways:

* ``delta_m`` — signed mean relative change in percent, oriented so that
  positive always means worse (a drop on a higher-is-better task counts
  positive, and vice versa).
* ``delta_m_deg`` — sum of only the degrading per-task terms, so isolated
  regressions are not washed out by improvements elsewhere.
* ``mean_rank`` — per-task competition ranks (1 = best, ties averaged) of
  several methods, averaged across tasks.

Plus Spearman rank correlation (average ranks for ties) for trend studies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class TaskScore:
    """One task's score next to its reference value."""

    value: float
    baseline: float
    higher_is_better: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or not np.isfinite(self.baseline):
            raise ValueError("scores must be finite")
        if self.baseline == 0.0:
            raise ValueError("baseline score must be nonzero")

    @property
    def oriented_delta_pct(self) -> float:
        """Relative change in percent, positive = degradation."""
        delta = (self.value - self.baseline) / self.baseline * 100.0
        return -delta if self.higher_is_better else delta


def delta_m(scores: Sequence[TaskScore]) -> float:
    """Mean oriented relative change across tasks, in percent."""
    if not scores:
        raise ValueError("delta_m needs at least one task score")
    return float(np.mean([s.oriented_delta_pct for s in scores]))


def delta_m_deg(scores: Sequence[TaskScore]) -> float:
    """Sum of the degrading (positive oriented) per-task changes, in percent."""
    if not scores:
        raise ValueError("delta_m_deg needs at least one task score")
    return float(sum(max(s.oriented_delta_pct, 0.0) for s in scores))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ascending ranks starting at 1; tied values share their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j < values.size and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def mean_rank(score_table, higher_is_better) -> np.ndarray:
    """Average per-task rank of each method (row), 1 = best.

    ``score_table`` is (n_methods, n_tasks); ``higher_is_better`` gives the
    orientation per task.  Ties share average ranks.
    """
    table = np.asarray(score_table, dtype=float)
    if table.ndim != 2 or table.shape[0] < 1 or table.shape[1] < 1:
        raise ValueError("score_table must be (n_methods, n_tasks)")
    if not np.all(np.isfinite(table)):
        raise ValueError("score_table must be finite")
    orient = list(higher_is_better)
    if len(orient) != table.shape[1]:
        raise ValueError("higher_is_better must have one entry per task")
    ranks = np.empty_like(table)
    for t in range(table.shape[1]):
        column = -table[:, t] if orient[t] else table[:, t]
        ranks[:, t] = _average_ranks(column)
    return ranks.mean(axis=1)


def spearman_correlation(x, y) -> float:
    """Spearman rank correlation with average ranks on ties."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if xa.size < 2:
        raise ValueError("need at least two observations")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise ValueError("observations must be finite")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise ValueError("spearman correlation undefined for constant input")
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))
