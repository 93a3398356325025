"""Two-phase training driver: explore weights in windows, then lock them in.

Phase 1 (exploration, the first ``exploration_ratio`` fraction of the
iteration budget): train with the current weights while buffering gradient and
loss snapshots; at the end of every ``window_size`` iterations, re-solve for
the weights that minimize the configured window cost and carry them into the
next window.  Quadratic costs go through the closed-form QP; the
condition-number cost goes through simplex search initialized at the previous
window's weights.

Phase 2: fix the aggregated weights (mean of the last ``aggregation_size``
window solutions, re-projected) and train out the remaining budget.

Every iteration is recorded: metric record plus raw losses, gradient norms
and the Gram upper triangle, so traces can be reconstructed exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    DEFAULT_WEIGHT_FLOOR,
    GradientSnapshot,
    LossSnapshot,
    MetricRecord,
    WeightVector,
    WindowBuffer,
    snapshot_from_gradients,
    uniform_weights,
)
from .costs import CostKind, quadratic_form, window_cost
from .metrics import metric_record
from .solver import SolverReport, project_feasible, solve_general, solve_quadratic

logger = logging.getLogger(__name__)

_SOLVER_STREAM = 0x50


@dataclass(frozen=True)
class AutoScaleConfig:
    """Knobs of the two-phase run.

    ``exploration_ratio * total_iters`` must be a whole number of iterations
    and a whole number of windows; ``aggregation_size`` may not exceed the
    window count.  ``exploration_ratio = 0`` degenerates to plain unitary
    scalarization for the full budget.
    """

    total_iters: int
    exploration_ratio: float = 0.2
    window_size: int = 50
    aggregation_size: int = 10
    cost_kind: CostKind = CostKind.EQUAL_GRAD_NORM
    seed: int = 0
    snapshot_stride: int = 1
    weight_floor: float = DEFAULT_WEIGHT_FLOOR
    solver_budget: int = 4000
    solver_restarts: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "cost_kind", CostKind.parse(self.cost_kind))
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if not 0.0 <= self.exploration_ratio <= 1.0:
            raise ValueError("exploration_ratio must lie in [0, 1]")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.aggregation_size < 1:
            raise ValueError("aggregation_size must be >= 1")
        if not 1 <= self.snapshot_stride <= self.window_size:
            raise ValueError("snapshot_stride must lie in [1, window_size]")
        exact = self.exploration_ratio * self.total_iters
        rounded = round(exact)
        if abs(exact - rounded) > 1e-9 * max(1.0, self.total_iters):
            raise ValueError(
                f"exploration_ratio * total_iters must be integral, got {exact}")
        if self.exploration_ratio > 0.0:
            if rounded < self.window_size:
                raise ValueError(
                    "exploration phase shorter than one window: "
                    f"{rounded} iterations < window_size {self.window_size}")
            if rounded % self.window_size != 0:
                raise ValueError(
                    f"window_size {self.window_size} must divide the "
                    f"exploration budget {rounded}")
            if self.aggregation_size > rounded // self.window_size:
                raise ValueError(
                    f"aggregation_size {self.aggregation_size} exceeds the "
                    f"{rounded // self.window_size} exploration windows")

    @property
    def exploration_iters(self) -> int:
        return int(round(self.exploration_ratio * self.total_iters))

    @property
    def num_windows(self) -> int:
        if self.exploration_ratio == 0.0:
            return 0
        return self.exploration_iters // self.window_size


@dataclass(frozen=True)
class WeightHistory:
    """Weights produced by a run: per window, aggregated, and per iteration.

    ``final_weight`` is None only for single-task runs, where the feasible
    weight-vector type (K >= 2) does not apply.
    """

    window_weights: tuple[WeightVector, ...]
    final_weight: WeightVector | None
    per_iteration_weights: tuple[tuple[float, ...], ...]

    def weight_at(self, iteration: int) -> tuple[float, ...]:
        return self.per_iteration_weights[iteration]


@dataclass(frozen=True)
class TrainingRun:
    """Everything a completed training run exposes."""

    theta_final: np.ndarray
    final_losses: tuple[float, ...]
    records: tuple[MetricRecord, ...]
    weight_history: WeightHistory
    losses: np.ndarray       # (T, K)
    grad_norms: np.ndarray   # (T, K)
    gram_upper: np.ndarray   # (T, K*(K+1)/2)
    solver_reports: tuple[SolverReport, ...] = ()


def aggregate_final_weight(window_weights: Sequence[WeightVector],
                           aggregation_size: int) -> WeightVector:
    """Mean of the last ``aggregation_size`` window weights, re-projected."""
    if aggregation_size < 1:
        raise ValueError("aggregation_size must be >= 1")
    if aggregation_size > len(window_weights):
        raise ValueError(
            f"aggregation_size {aggregation_size} exceeds available "
            f"{len(window_weights)} window weights")
    tail = window_weights[-aggregation_size:]
    mean = np.mean([wv.w for wv in tail], axis=0)
    return project_feasible(mean, tail[-1].floor)


def _upper_triangle(gram: np.ndarray) -> np.ndarray:
    k = gram.shape[0]
    return gram[np.triu_indices(k)]


class _RunRecorder:
    """Accumulates the per-iteration outputs of a training loop."""

    def __init__(self, total_iters: int, k: int) -> None:
        self.records: list[MetricRecord] = []
        self.per_iter_weights: list[tuple[float, ...]] = []
        self.losses = np.empty((total_iters, k))
        self.grad_norms = np.empty((total_iters, k))
        self.gram_upper = np.empty((total_iters, k * (k + 1) // 2))

    def add(self, t: int, grad_snap: GradientSnapshot, loss_snap: LossSnapshot,
            weights) -> None:
        self.records.append(metric_record(grad_snap, loss_snap, weights))
        w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, float)
        self.per_iter_weights.append(tuple(float(v) for v in w))
        self.losses[t] = loss_snap.losses
        self.grad_norms[t] = grad_snap.norms
        self.gram_upper[t] = _upper_triangle(grad_snap.gram)


def _train(problem, weight_for_iter: Callable[[int], np.ndarray],
           total_iters: int,
           on_snapshot: Callable[[int, GradientSnapshot, LossSnapshot], None] | None = None,
           ) -> tuple[np.ndarray, _RunRecorder]:
    """Fixed-step descent on the weighted total loss, recording as it goes."""
    theta = np.array(problem.initial_theta(), dtype=float)
    k = problem.num_tasks
    h = problem.step_size
    shared = problem.shared_slice
    rec = _RunRecorder(total_iters, k)
    initial = None
    prev = None
    for t in range(total_iters):
        w = weight_for_iter(t)
        w_arr = w.w if isinstance(w, WeightVector) else np.asarray(w, float)
        losses = np.asarray(problem.task_losses(theta), dtype=float)
        grads = np.asarray(problem.task_gradients(theta), dtype=float)
        if t == 0:
            initial = losses.copy()
            prev = losses.copy()
        grad_snap = snapshot_from_gradients(grads[:, shared], iteration=t)
        loss_snap = LossSnapshot(losses=losses, initial_losses=initial,
                                 prev_losses=prev, iteration=t)
        rec.add(t, grad_snap, loss_snap, w)
        if on_snapshot is not None:
            on_snapshot(t, grad_snap, loss_snap)
        theta = theta - h * (w_arr @ grads)
        prev = losses
    return theta, rec


def _child_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_autoscale(problem, config: AutoScaleConfig) -> TrainingRun:
    """Full two-phase run on ``problem`` under ``config``."""
    k = problem.num_tasks
    floor = config.weight_floor
    current = uniform_weights(k, floor)
    window_weights: list[WeightVector] = []
    reports: list[SolverReport] = []
    explore = config.exploration_iters
    tau = config.window_size
    stride = config.snapshot_stride
    capacity = len(range(0, tau, stride))

    buffer_pairs: list = []

    # Phase 1 runs window by window so each solve can see its buffer; the
    # recorder spans the whole run for a single contiguous trace.
    theta = np.array(problem.initial_theta(), dtype=float)
    rec = _RunRecorder(config.total_iters, k)
    h = problem.step_size
    shared = problem.shared_slice
    initial = None
    prev = None

    def step(t: int, weights: WeightVector) -> None:
        nonlocal theta, initial, prev
        losses = np.asarray(problem.task_losses(theta), dtype=float)
        grads = np.asarray(problem.task_gradients(theta), dtype=float)
        if t == 0:
            initial = losses.copy()
            prev = losses.copy()
        grad_snap = snapshot_from_gradients(grads[:, shared], iteration=t)
        loss_snap = LossSnapshot(losses=losses, initial_losses=initial,
                                 prev_losses=prev, iteration=t)
        rec.add(t, grad_snap, loss_snap, weights)
        if t < explore and (t % tau) % stride == 0:
            buffer_pairs.append((grad_snap, loss_snap))
        theta = theta - h * (weights.w @ grads)
        prev = losses

    t = 0
    for w_index in range(config.num_windows):
        buffer_pairs.clear()
        for _ in range(tau):
            step(t, current)
            t += 1
        window = WindowBuffer(pairs=tuple(buffer_pairs), capacity=capacity,
                              stride=stride)
        if config.cost_kind.is_quadratic:
            report = solve_quadratic(quadratic_form(config.cost_kind, window),
                                     floor=floor)
        else:
            report = solve_general(
                lambda wv: window_cost(config.cost_kind, wv, window),
                w_init=current,
                floor=floor,
                budget=config.solver_budget,
                restarts=config.solver_restarts,
                seed=_child_seed(config.seed, _SOLVER_STREAM, w_index),
            )
        reports.append(report)
        # The solve may never regress the window cost; on a (float-level)
        # regression keep the previous weights.
        incumbent = window_cost(config.cost_kind, current, window)
        if report.cost_at_w_star <= incumbent * (1.0 + 1e-12) + 1e-15:
            current = report.w_star
        else:  # pragma: no cover - defensive, solvers guarantee this
            logger.warning("window %d solve regressed (%.3e > %.3e); keeping "
                           "previous weights", w_index, report.cost_at_w_star,
                           incumbent)
        window_weights.append(current)

    if config.num_windows > 0:
        final_weight = aggregate_final_weight(window_weights,
                                              config.aggregation_size)
    else:
        final_weight = uniform_weights(k, floor)

    while t < config.total_iters:
        step(t, final_weight)
        t += 1

    final_losses = tuple(float(v) for v in problem.task_losses(theta))
    history = WeightHistory(window_weights=tuple(window_weights),
                            final_weight=final_weight,
                            per_iteration_weights=tuple(rec.per_iter_weights))
    return TrainingRun(theta_final=theta, final_losses=final_losses,
                       records=tuple(rec.records), weight_history=history,
                       losses=rec.losses, grad_norms=rec.grad_norms,
                       gram_upper=rec.gram_upper,
                       solver_reports=tuple(reports))


def run_fixed_scalarization(problem, weights, total_iters: int) -> TrainingRun:
    """Train with constant task weights for the whole budget.

    ``weights`` is a WeightVector, or a plain length-K array (accepted so the
    single-task case K=1 works, where the feasible-set type does not apply).
    """
    if total_iters < 1:
        raise ValueError("total_iters must be >= 1")
    k = problem.num_tasks
    w_arr = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, float)
    if w_arr.shape != (k,):
        raise ValueError(f"weights must have length {k}, got shape {w_arr.shape}")
    theta, rec = _train(problem, lambda t: weights, total_iters)
    final_losses = tuple(float(v) for v in problem.task_losses(theta))
    if isinstance(weights, WeightVector):
        final_wv = weights
    elif k >= 2:
        final_wv = WeightVector(w_arr)
    else:
        final_wv = None
    history = WeightHistory(window_weights=(), final_weight=final_wv,
                            per_iteration_weights=tuple(rec.per_iter_weights))
    return TrainingRun(theta_final=theta, final_losses=final_losses,
                       records=tuple(rec.records), weight_history=history,
                       losses=rec.losses, grad_norms=rec.grad_norms,
                       gram_upper=rec.gram_upper)


def run_weight_schedule(problem, weight_for_iter: Callable[[int], WeightVector],
                        total_iters: int) -> TrainingRun:
    """Train with an arbitrary per-iteration weight schedule (e.g. random
    loss weighting)."""
    if total_iters < 1:
        raise ValueError("total_iters must be >= 1")
    theta, rec = _train(problem, weight_for_iter, total_iters)
    final_losses = tuple(float(v) for v in problem.task_losses(theta))
    last = weight_for_iter(total_iters - 1)
    final_wv = last if isinstance(last, WeightVector) else WeightVector(np.asarray(last, float))
    history = WeightHistory(window_weights=(), final_weight=final_wv,
                            per_iteration_weights=tuple(rec.per_iter_weights))
    return TrainingRun(theta_final=theta, final_losses=final_losses,
                       records=tuple(rec.records), weight_history=history,
                       losses=rec.losses, grad_norms=rec.grad_norms,
                       gram_upper=rec.gram_upper)
