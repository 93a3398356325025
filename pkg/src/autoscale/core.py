"""Shared domain types for multi-task weight selection.

Everything downstream (metrics, costs, solvers, the scheduler) speaks in terms
of the types defined here: feasible weight vectors, per-iteration gradient and
loss snapshots, bounded windows of snapshots, and per-iteration metric records.
Gradients are never stored whole; a snapshot keeps only per-task norms and the
K x K Gram matrix, which is sufficient for every metric and cost in the
package.

All types are immutable after construction and validate their invariants
eagerly, so a constructed value is always safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

#: Smallest admissible task weight.  Keeps every task marginally active and
#: every weighted Gram matrix away from exact rank collapse.
DEFAULT_WEIGHT_FLOOR = 1e-4

#: Absolute tolerance on the sum-to-K constraint of a weight vector.
WEIGHT_SUM_TOL = 1e-8

_U64 = (1 << 64) - 1


class DegenerateInputError(ValueError):
    """Input is too degenerate for the requested quantity.

    Examples: a gradient-magnitude ratio of two zero-norm gradients, a cosine
    against a zero gradient, a condition number of an all-zero Gram matrix.
    Callers that aggregate over task pairs may catch this, skip the pair and
    record a flag instead of failing the whole record.
    """


def _frozen_array(values, dtype=float) -> np.ndarray:
    """Copy ``values`` into a read-only ndarray (defensive immutability)."""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent generator from one 64-bit seed and a stream key.

    Every consumer of randomness in the package (problem construction, weight
    sampling, per-iteration random weighting, solver restarts) draws from its
    own counter-based stream, so adding or reordering consumers never perturbs
    the draws of another.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & _U64,
                                spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# weight vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WeightVector:
    """A feasible task-weight vector: w_i >= floor and sum(w) == K.

    Construct through :func:`make_weight_vector` (projects arbitrary raw
    values) or :func:`autoscale.solver.project_feasible`; direct construction
    only accepts already-feasible values.
    """

    w: np.ndarray
    floor: float = DEFAULT_WEIGHT_FLOOR

    def __post_init__(self) -> None:
        arr = _frozen_array(self.w)
        object.__setattr__(self, "w", arr)
        if arr.ndim != 1:
            raise ValueError("weight vector must be one-dimensional")
        k = arr.size
        if k < 2:
            raise ValueError(f"weight vector needs at least 2 tasks, got {k}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weight vector entries must be finite")
        if not (0.0 < self.floor < 1.0):
            raise ValueError(f"weight floor must lie in (0, 1), got {self.floor}")
        if np.any(arr < self.floor):
            raise ValueError(
                f"weight entries must be >= floor {self.floor}: {arr.tolist()}")
        if abs(float(arr.sum()) - k) > WEIGHT_SUM_TOL:
            raise ValueError(
                f"weights must sum to K={k} within {WEIGHT_SUM_TOL}, "
                f"got {float(arr.sum())!r}")

    @property
    def k(self) -> int:
        return self.w.size

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.w)

    def __repr__(self) -> str:  # keep reprs short in logs and test output
        body = ", ".join(f"{v:.6g}" for v in self.w)
        return f"WeightVector([{body}])"


def make_weight_vector(raw, floor: float = DEFAULT_WEIGHT_FLOOR) -> WeightVector:
    """Project raw nonnegative values onto the feasible weight set.

    Computes the fixed point of clamp-below-floor followed by rescale-to-sum-K:
    coordinates that cannot stay above the floor after rescaling are pinned at
    exactly ``floor`` and the remaining budget ``K - floor * #pinned`` is
    distributed over the free coordinates proportionally to their raw values.
    Idempotent on its own output.

    Raises ``ValueError`` for non-finite input, fewer than two entries, or
    input with no positive mass.
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 1:
        raise ValueError("raw weights must be one-dimensional")
    k = arr.size
    if k < 2:
        raise ValueError(f"need at least 2 tasks, got {k}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("raw weights must be finite")
    work = np.maximum(arr, 0.0)
    if not np.any(work > 0.0):
        raise ValueError("raw weights have no positive mass to distribute")

    pinned = np.zeros(k, dtype=bool)
    for _ in range(k):
        free = ~pinned
        budget = k - floor * int(pinned.sum())
        scale = budget / float(work[free].sum())
        scaled = np.where(pinned, floor, work * scale)
        violating = free & (scaled < floor)
        if not violating.any():
            return WeightVector(scaled, floor)
        pinned |= violating
    raise AssertionError("floor projection failed to settle")  # pragma: no cover


def uniform_weights(k: int, floor: float = DEFAULT_WEIGHT_FLOOR) -> WeightVector:
    """The all-ones weight vector (unitary scalarization)."""
    return WeightVector(np.ones(k), floor)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GradientSnapshot:
    """Compressed per-task gradients at one iteration.

    Only the per-task Euclidean norms and the K x K Gram matrix of inner
    products survive; the raw (possibly huge) gradient vectors do not.  Every
    downstream metric and cost depends on the gradients only through these.
    """

    norms: np.ndarray
    gram: np.ndarray
    iteration: int = 0

    def __post_init__(self) -> None:
        norms = _frozen_array(self.norms)
        gram = _frozen_array(self.gram)
        object.__setattr__(self, "norms", norms)
        object.__setattr__(self, "gram", gram)
        k = norms.size
        if norms.ndim != 1 or k < 1:
            raise ValueError("norms must be a non-empty vector")
        if gram.shape != (k, k):
            raise ValueError(f"gram must be {k}x{k}, got {gram.shape}")
        if not (np.all(np.isfinite(norms)) and np.all(np.isfinite(gram))):
            raise ValueError("snapshot entries must be finite")
        if np.any(norms < 0):
            raise ValueError("gradient norms must be nonnegative")
        scale = max(1.0, float(np.abs(gram).max()))
        if float(np.abs(gram - gram.T).max()) > 1e-10 * scale:
            raise ValueError("gram matrix must be symmetric (1e-10 relative)")
        diag = np.diag(gram)
        sq = norms ** 2
        if np.any(np.abs(diag - sq) > 1e-8 * np.maximum(1.0, sq)):
            raise ValueError("gram diagonal must equal squared norms (1e-8 relative)")
        bound = np.outer(norms, norms)
        if np.any(np.abs(gram) > bound * (1.0 + 1e-8) + 1e-12):
            raise ValueError("gram entries violate the Cauchy-Schwarz bound")
        if not (isinstance(self.iteration, (int, np.integer)) and self.iteration >= 0):
            raise ValueError(f"iteration must be a nonnegative int, got {self.iteration!r}")
        object.__setattr__(self, "iteration", int(self.iteration))

    @property
    def k(self) -> int:
        return self.norms.size


def snapshot_from_gradients(task_gradients, iteration: int = 0) -> GradientSnapshot:
    """Compress a stack of per-task gradient vectors into a snapshot.

    ``task_gradients`` is a (K, D) array-like: one row per task.  Norms and
    the Gram matrix are computed here so the two stay mutually consistent.
    """
    g = np.asarray(task_gradients, dtype=float)
    if g.ndim != 2:
        raise ValueError(f"expected a (K, D) gradient stack, got shape {g.shape}")
    gram = g @ g.T
    # Symmetrize away the last-bit asymmetry of floating matmul.
    gram = 0.5 * (gram + gram.T)
    norms = np.sqrt(np.maximum(np.diag(gram), 0.0))
    # Rewrite the diagonal from the norms so both views agree bit-for-bit.
    gram = gram.copy()
    np.fill_diagonal(gram, norms ** 2)
    return GradientSnapshot(norms=norms, gram=gram, iteration=iteration)


@dataclass(frozen=True, eq=False)
class LossSnapshot:
    """Per-task losses at one iteration, plus the references ratios need.

    ``initial_losses`` are the task losses at iteration 0 of the same run
    (strictly positive so progress ratios are well defined);  ``prev_losses``
    are the values from one iteration earlier.  At iteration 0 the convention
    is ``prev_losses == losses`` so one-step descent ratios start at one.
    """

    losses: np.ndarray
    initial_losses: np.ndarray
    prev_losses: np.ndarray
    iteration: int = 0

    def __post_init__(self) -> None:
        losses = _frozen_array(self.losses)
        initial = _frozen_array(self.initial_losses)
        prev = _frozen_array(self.prev_losses)
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "initial_losses", initial)
        object.__setattr__(self, "prev_losses", prev)
        k = losses.size
        if losses.ndim != 1 or k < 1:
            raise ValueError("losses must be a non-empty vector")
        if initial.shape != (k,) or prev.shape != (k,):
            raise ValueError("losses, initial_losses and prev_losses must share length")
        for name, arr in (("losses", losses), ("initial_losses", initial),
                          ("prev_losses", prev)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if np.any(losses < 0):
            raise ValueError("losses must be nonnegative")
        if np.any(initial <= 0):
            raise ValueError("initial_losses must be strictly positive")
        if not (isinstance(self.iteration, (int, np.integer)) and self.iteration >= 0):
            raise ValueError(f"iteration must be a nonnegative int, got {self.iteration!r}")
        object.__setattr__(self, "iteration", int(self.iteration))

    @property
    def k(self) -> int:
        return self.losses.size


@dataclass(frozen=True, eq=False)
class WindowBuffer:
    """A completed observation window: aligned snapshot pairs, oldest first.

    Iterations advance by exactly ``stride`` (contiguous when stride is 1) and
    the buffer never holds more than ``capacity`` pairs.
    """

    pairs: tuple
    capacity: int
    stride: int = 1

    def __post_init__(self) -> None:
        pairs = tuple(self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if self.capacity < 1:
            raise ValueError("window capacity must be >= 1")
        if self.stride < 1:
            raise ValueError("snapshot stride must be >= 1")
        if len(pairs) > self.capacity:
            raise ValueError(
                f"window holds {len(pairs)} snapshots, capacity is {self.capacity}")
        prev_iter = None
        for grad, loss in pairs:
            if not isinstance(grad, GradientSnapshot) or not isinstance(loss, LossSnapshot):
                raise TypeError("window pairs must be (GradientSnapshot, LossSnapshot)")
            if grad.iteration != loss.iteration:
                raise ValueError(
                    f"misaligned pair: gradient iter {grad.iteration} vs "
                    f"loss iter {loss.iteration}")
            if prev_iter is not None and grad.iteration != prev_iter + self.stride:
                raise ValueError(
                    f"window iterations must advance by {self.stride}: "
                    f"{prev_iter} -> {grad.iteration}")
            prev_iter = grad.iteration

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator:
        return iter(self.pairs)

    @property
    def gradients(self) -> tuple:
        return tuple(g for g, _ in self.pairs)

    @property
    def losses(self) -> tuple:
        return tuple(l for _, l in self.pairs)


# ---------------------------------------------------------------------------
# metric records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRecord:
    """One iteration's worth of optimization-health metrics.

    Pair-aggregated values (``gms_mean``, ``gcs_mean``) are ``None`` when every
    task pair was degenerate (and flagged as such); per-task fields are plain
    float tuples so records compare and serialize exactly.
    """

    iteration: int
    gms_mean: float | None
    gcs_mean: float | None
    cond_number: float
    ilr: tuple[float, ...]
    ilr_std: float
    ldr: tuple[float, ...]
    rl: tuple[float, ...]
    rl_std: float
    weights: tuple[float, ...]
    degenerate_flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise ValueError("iteration must be nonnegative")
        if self.gms_mean is not None and not 0.0 <= self.gms_mean <= 1.0:
            raise ValueError(f"gms_mean out of [0, 1]: {self.gms_mean}")
        if self.gcs_mean is not None and not -1.0 <= self.gcs_mean <= 1.0:
            raise ValueError(f"gcs_mean out of [-1, 1]: {self.gcs_mean}")
        if not self.cond_number >= 1.0:
            raise ValueError(f"cond_number must be >= 1, got {self.cond_number}")
        if self.rl and abs(sum(self.rl) - 1.0) > 1e-12:
            raise ValueError(f"relative losses must sum to 1, got {sum(self.rl)!r}")
        for name in ("ilr", "ldr", "rl", "weights", "degenerate_flags"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
