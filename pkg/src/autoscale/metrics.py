"""Optimization-health metrics for multi-task training.

Six diagnostics computed from compressed gradient/loss snapshots:

* pairwise gradient magnitude similarity (1 = equal norms, 0 = full dominance),
* pairwise gradient cosine similarity (direction conflict),
* per-task inverse learning rate (current / initial loss),
* per-task one-step loss descending rate (current / previous loss),
* per-task relative loss (share of the total),
* condition number of the stacked task-gradient matrix.

The condition number never touches raw gradients: for the D x K stack G it
equals sqrt(lambda_max / lambda_min) of the K x K Gram matrix G^T G, so the
compressed snapshot is enough.  Near-singular Gram matrices are floored at
``COND_EPS_LAMBDA * lambda_max`` and the flooring is flagged.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import (
    DegenerateInputError,
    GradientSnapshot,
    LossSnapshot,
    MetricRecord,
    WeightVector,
)

#: Relative floor applied to the smallest Gram eigenvalue before the ratio.
COND_EPS_LAMBDA = 1e-12


def _check_pair(snapshot: GradientSnapshot, i: int, j: int) -> None:
    k = snapshot.k
    if not (0 <= i < k and 0 <= j < k):
        raise IndexError(f"task pair ({i}, {j}) out of range for K={k}")
    if i == j:
        raise ValueError(f"task pair must be distinct, got ({i}, {j})")


def grad_magnitude_similarity(snapshot: GradientSnapshot, i: int, j: int) -> float:
    """2|g_i||g_j| / (|g_i|^2 + |g_j|^2), in [0, 1].

    Equals 1 exactly when the two norms coincide; tends to 0 as one task's
    gradient dominates the other.  A single zero norm is the full-dominance
    limit (0.0); two zero norms are degenerate.
    """
    _check_pair(snapshot, i, j)
    a = float(snapshot.norms[i])
    b = float(snapshot.norms[j])
    if a == 0.0 and b == 0.0:
        raise DegenerateInputError(f"gms({i},{j}): both gradient norms are zero")
    # 2ab <= a^2 + b^2 holds exactly in reals but the quotient can round a
    # half-ulp above 1 when a ~ b; clamp like the cosine does.
    return min(1.0, 2.0 * a * b / (a * a + b * b))


def grad_cosine_similarity(snapshot: GradientSnapshot, i: int, j: int) -> float:
    """cos(angle(g_i, g_j)) from the Gram matrix, clamped to [-1, 1]."""
    _check_pair(snapshot, i, j)
    a = float(snapshot.norms[i])
    b = float(snapshot.norms[j])
    if a == 0.0 or b == 0.0:
        raise DegenerateInputError(f"gcs({i},{j}): zero-norm gradient")
    value = float(snapshot.gram[i, j]) / (a * b)
    return min(1.0, max(-1.0, value))


def inverse_learning_rate(loss_snapshot: LossSnapshot) -> np.ndarray:
    """Per-task progress ratio l_t / l_0 (1 at start, -> 0 as a task trains)."""
    return np.asarray(loss_snapshot.losses / loss_snapshot.initial_losses)


def loss_descending_rate(loss_snapshot: LossSnapshot) -> np.ndarray:
    """Per-task one-step ratio l_t / l_{t-1}; all ones at iteration 0."""
    if loss_snapshot.iteration == 0:
        return np.ones(loss_snapshot.k)
    prev = loss_snapshot.prev_losses
    if np.any(prev <= 0):
        raise ValueError("loss_descending_rate needs strictly positive previous losses")
    return np.asarray(loss_snapshot.losses / prev)


def relative_loss(loss_snapshot: LossSnapshot) -> np.ndarray:
    """Per-task share of the total loss; sums to one."""
    total = float(loss_snapshot.losses.sum())
    if total <= 0.0:
        raise DegenerateInputError("relative_loss: all task losses are zero")
    return np.asarray(loss_snapshot.losses / total)


def kappa_from_grams(grams: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized condition numbers from a stack of Gram matrices.

    ``grams`` has shape (..., K, K).  Returns ``(kappa, floored)`` where
    ``kappa`` is sqrt(lambda_max / max(lambda_min, eps * lambda_max)) and
    ``floored`` marks entries whose smallest eigenvalue hit the floor.
    Entries whose Gram matrix is entirely non-positive come back as NaN.
    """
    lam = np.linalg.eigvalsh(np.asarray(grams, dtype=float))
    lam_max = lam[..., -1]
    lam_min = lam[..., 0]
    good = lam_max > 0.0
    floor = COND_EPS_LAMBDA * lam_max
    floored = good & (lam_min < floor)
    lam_min_eff = np.maximum(lam_min, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.sqrt(lam_max / lam_min_eff)
    kappa = np.where(good, kappa, np.nan)
    return kappa, floored


def _condition_number(snapshot: GradientSnapshot,
                      weights: WeightVector | Sequence[float] | None = None,
                      ) -> tuple[float, bool]:
    gram = snapshot.gram
    if weights is not None:
        w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, float)
        if w.shape != (snapshot.k,):
            raise ValueError(f"weights must have length {snapshot.k}, got {w.shape}")
        gram = gram * np.outer(w, w)
    kappa, floored = kappa_from_grams(gram)
    if np.isnan(kappa):
        raise DegenerateInputError("condition_number: Gram matrix has no positive eigenvalue")
    return float(kappa), bool(floored)


def condition_number(snapshot: GradientSnapshot,
                     weights: WeightVector | Sequence[float] | None = None) -> float:
    """Condition number of the (optionally weight-scaled) task-gradient stack.

    With ``weights`` given, the Gram matrix is scaled to diag(w) G^T G diag(w),
    i.e. the Gram of the stack whose k-th column is w_k * g_k.  Always >= 1.
    """
    kappa, _ = _condition_number(snapshot, weights)
    return kappa


def pairwise_mean(per_pair_metric: Callable[[GradientSnapshot, int, int], float],
                  snapshot: GradientSnapshot,
                  skip_degenerate: bool = False) -> float:
    """Mean of a pair metric over the K(K-1)/2 unordered task pairs.

    By default degenerate pairs propagate their error; with
    ``skip_degenerate`` they are left out of the mean (an error is still
    raised if no valid pair remains).
    """
    mean, _ = _pairwise_mean_flagged(per_pair_metric, snapshot, skip_degenerate)
    if mean is None:
        raise DegenerateInputError(
            f"{getattr(per_pair_metric, '__name__', 'pair metric')}: every task pair degenerate")
    return mean


def _pairwise_mean_flagged(per_pair_metric, snapshot, skip_degenerate):
    k = snapshot.k
    if k < 2:
        raise ValueError("pairwise_mean needs at least two tasks")
    name = getattr(per_pair_metric, "__name__", "pair_metric")
    values = []
    flags = []
    for i in range(k):
        for j in range(i + 1, k):
            try:
                values.append(float(per_pair_metric(snapshot, i, j)))
            except DegenerateInputError as exc:
                if not skip_degenerate:
                    raise
                flags.append(f"{name}({i},{j}) skipped: {exc}")
    mean = float(np.mean(values)) if values else None
    return mean, tuple(flags)


def task_std(values) -> float:
    """Population standard deviation (divisor K) across tasks."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("task_std needs a vector of at least two tasks")
    if not np.all(np.isfinite(arr)):
        raise ValueError("task_std input must be finite")
    return float(np.std(arr))


def metric_record(grad_snapshot: GradientSnapshot,
                  loss_snapshot: LossSnapshot,
                  weights) -> MetricRecord:
    """Assemble the full per-iteration metric record.

    Degenerate per-pair values are skipped from the means and the skips are
    recorded in ``degenerate_flags``; a floored condition number is flagged as
    well.  ``weights`` is the weight vector in effect at this iteration
    (a WeightVector, or a plain length-K array for single-task runs).
    """
    if grad_snapshot.iteration != loss_snapshot.iteration:
        raise ValueError(
            f"snapshot iterations differ: gradient {grad_snapshot.iteration} "
            f"vs loss {loss_snapshot.iteration}")
    k = grad_snapshot.k
    if loss_snapshot.k != k:
        raise ValueError(f"snapshot task counts differ: {k} vs {loss_snapshot.k}")
    w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, float)
    if w.shape != (k,):
        raise ValueError(f"weights must have length {k}")

    flags: list[str] = []
    if k >= 2:
        gms_mean, gms_flags = _pairwise_mean_flagged(
            grad_magnitude_similarity, grad_snapshot, True)
        gcs_mean, gcs_flags = _pairwise_mean_flagged(
            grad_cosine_similarity, grad_snapshot, True)
        flags.extend(gms_flags)
        flags.extend(gcs_flags)
    else:
        gms_mean = gcs_mean = None
        flags.append("pair metrics skipped: single task")

    try:
        cond, floored = _condition_number(grad_snapshot)
        if floored:
            flags.append("cond_number floored: Gram numerically singular")
    except DegenerateInputError as exc:
        cond = 1.0
        flags.append(f"cond_number degenerate: {exc}")

    ilr = inverse_learning_rate(loss_snapshot)
    try:
        ldr = loss_descending_rate(loss_snapshot)
    except ValueError:
        ldr = np.ones(k)
        flags.append("ldr degenerate: nonpositive previous loss")
    try:
        rl = relative_loss(loss_snapshot)
    except DegenerateInputError as exc:
        rl = np.full(k, 1.0 / k)
        flags.append(f"rl degenerate: {exc}")

    ilr_std = task_std(ilr) if k >= 2 else 0.0
    rl_std = task_std(rl) if k >= 2 else 0.0

    return MetricRecord(
        iteration=grad_snapshot.iteration,
        gms_mean=gms_mean,
        gcs_mean=gcs_mean,
        cond_number=cond,
        ilr=tuple(float(v) for v in ilr),
        ilr_std=ilr_std,
        ldr=tuple(float(v) for v in ldr),
        rl=tuple(float(v) for v in rl),
        rl_std=rl_std,
        weights=tuple(float(v) for v in w),
        degenerate_flags=tuple(flags),
    )
