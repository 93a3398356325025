"""Constrained minimizers over the feasible weight set.

The feasible set is {w : sum(w) = K, w_i >= floor}.  Two solve paths:

* :func:`solve_quadratic` — exact minimizer of w^T M w for the quadratic cost
  kinds.  Solves the equality-constrained stationarity system in a sum-zero
  basis, then pins floor-violating coordinates one at a time (most violated
  first) and re-solves over the free coordinates.  A Hessian that is singular
  on the feasible subspace yields the minimum-norm solution closest to the
  uniform weight vector.
* :func:`solve_general` — derivative-free descent for arbitrary window costs
  (the condition-number cost in particular).  Runs Nelder-Mead on an
  unconstrained reparameterization of the simplex (w = K * normalized
  exponential of z, floored), with multi-start: the provided initial point
  plus seeded perturbed restarts.  Never returns a point worse than the
  initial one; cost ties break toward the candidate closest to uniform.

Both produce a :class:`SolverReport`; fixed inputs and seed give bit-identical
reports.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    DEFAULT_WEIGHT_FLOOR,
    DegenerateInputError,
    WeightVector,
    spawn_rng,
)

#: Relative window for treating two candidate costs as tied.
TIE_TOL = 1e-10

#: Convergence threshold: a full search round must improve the incumbent by
#: at least this much to count as progress.
IMPROVEMENT_TOL = 1e-8


class SolverMethod(enum.Enum):
    CLOSED_FORM_QP = "ClosedFormQP"
    SIMPLEX_SEARCH = "SimplexSearch"


@dataclass(frozen=True)
class SolverReport:
    """Outcome of one window solve."""

    w_star: WeightVector
    cost_at_w_star: float
    iterations: int
    converged: bool
    method: SolverMethod


def project_feasible(raw, floor: float = DEFAULT_WEIGHT_FLOOR) -> WeightVector:
    """Euclidean projection onto {sum(w) = K, w_i >= floor}.

    Clamp-and-redistribute: shift all free coordinates by a common amount to
    restore the sum, pin coordinates that fall below the floor, repeat.  The
    grown pin set is consistent, so this terminates in at most K rounds with
    the exact projection.
    """
    v = np.asarray(raw, dtype=float)
    if v.ndim != 1:
        raise ValueError("raw weights must be one-dimensional")
    k = v.size
    if k < 2:
        raise ValueError(f"need at least 2 tasks, got {k}")
    if not np.all(np.isfinite(v)):
        raise ValueError("raw weights must be finite")

    pinned = np.zeros(k, dtype=bool)
    for _ in range(k):
        free = ~pinned
        n_free = int(free.sum())
        budget = k - floor * int(pinned.sum())
        shift = (budget - float(v[free].sum())) / n_free
        candidate = np.where(pinned, floor, v + shift)
        violating = free & (candidate < floor)
        if not violating.any():
            return WeightVector(candidate, floor)
        pinned |= violating
    raise AssertionError("feasible projection failed to settle")  # pragma: no cover


def _sum_zero_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n x (n-1)) of {x : sum(x) = 0} (Helmert columns)."""
    z = np.zeros((n, n - 1))
    for j in range(1, n):
        norm = np.sqrt(j * (j + 1))
        z[:j, j - 1] = 1.0 / norm
        z[j, j - 1] = -j / norm
    return z


def solve_quadratic(m, floor: float = DEFAULT_WEIGHT_FLOOR) -> SolverReport:
    """Exact minimizer of w^T M w over the feasible weight set.

    ``m`` must be symmetric positive semidefinite (tolerance 1e-8 relative).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"M must be square, got shape {m.shape}")
    k = m.shape[0]
    if k < 2:
        raise ValueError("M must be at least 2x2")
    scale = max(1.0, float(np.abs(m).max()))
    if float(np.abs(m - m.T).max()) > 1e-8 * scale:
        raise ValueError("M must be symmetric (1e-8 relative)")
    m = 0.5 * (m + m.T)
    eigs = np.linalg.eigvalsh(m)
    if eigs[0] < -1e-8 * max(1.0, eigs[-1]):
        raise ValueError(f"M must be positive semidefinite, min eigenvalue {eigs[0]}")

    pinned = np.zeros(k, dtype=bool)
    rounds = 0
    while True:
        rounds += 1
        free = np.flatnonzero(~pinned)
        n_free = free.size
        budget = k - floor * int(pinned.sum())
        w = np.where(pinned, floor, 0.0)
        if n_free == 1:
            w[free[0]] = budget
        else:
            # Center of the free face plus a sum-zero correction.
            center = np.full(n_free, budget / n_free)
            z = _sum_zero_basis(n_free)
            m_ff = m[np.ix_(free, free)]
            grad_const = m_ff @ center
            if pinned.any():
                grad_const = grad_const + m[np.ix_(free, np.flatnonzero(pinned))] @ \
                    np.full(int(pinned.sum()), floor)
            h = z.T @ m_ff @ z
            b = z.T @ grad_const
            # lstsq returns the minimum-norm y when h is singular, which keeps
            # the solution as close to the (uniform-share) center as possible.
            y, *_ = np.linalg.lstsq(h, -b, rcond=None)
            w[free] = center + z @ y
        if n_free == 1 or np.all(w[free] >= floor - 1e-12):
            w_star = project_feasible(w, floor)
            cost = float(w_star.w @ m @ w_star.w)
            return SolverReport(w_star=w_star, cost_at_w_star=cost,
                                iterations=rounds, converged=True,
                                method=SolverMethod.CLOSED_FORM_QP)
        worst = free[int(np.argmin(w[free]))]
        pinned[worst] = True


# ---------------------------------------------------------------------------
# derivative-free path
# ---------------------------------------------------------------------------

def _weights_from_logits(z: np.ndarray, k: int, floor: float) -> WeightVector:
    """Map an unconstrained (K-1)-vector to a feasible weight vector."""
    full = np.append(z, 0.0)
    full = full - full.max()
    e = np.exp(full)
    return project_feasible(k * e / e.sum(), floor)


def _logits_from_weights(w: np.ndarray) -> np.ndarray:
    logs = np.log(w)
    return logs[:-1] - logs[-1]


def solve_general(cost: Callable[[WeightVector], float],
                  w_init: WeightVector,
                  floor: float | None = None,
                  budget: int = 4000,
                  restarts: int = 4,
                  seed: int = 0) -> SolverReport:
    """Derivative-free minimization of an arbitrary window cost.

    Nelder-Mead over the sum-to-K simplex via the normalized-exponential
    reparameterization, started from ``w_init`` and from ``restarts`` seeded
    perturbations of it.  Each start is polished by re-running the descent
    from its incumbent with a shrinking initial simplex until one full search
    round improves the incumbent by less than 1e-8 (a single descent can stall
    with the best vertex pinned while only the worst vertices move, so one
    round is a whole descent, not one reflection).  ``budget`` caps total cost
    evaluations; exhausting it returns the best point so far with
    ``converged=False``.  The result is never worse than ``w_init``.
    """
    if floor is None:
        floor = w_init.floor
    k = w_init.k
    n = k - 1
    evals = 0
    budget_hit = False

    def run_cost(wv: WeightVector) -> float:
        nonlocal evals
        evals += 1
        try:
            return float(cost(wv))
        except DegenerateInputError:
            return float("inf")

    def f(z: np.ndarray) -> tuple[float, WeightVector]:
        wv = _weights_from_logits(z, k, floor)
        return run_cost(wv), wv

    init_cost = run_cost(w_init)
    candidates: list[tuple[float, WeightVector]] = [(init_cost, w_init)]

    z_init = _logits_from_weights(w_init.w)
    starts = [z_init]
    rng = spawn_rng(seed, 0xD1CE)
    for _ in range(restarts):
        starts.append(z_init + rng.normal(0.0, 0.75, size=n))

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5

    def descend(z0: np.ndarray, step: float
                ) -> tuple[float, WeightVector, np.ndarray]:
        """One complete Nelder-Mead descent from ``z0``.

        Runs until the simplex values have collapsed (relative spread below
        1e-12), an iteration cap is reached, or the budget runs out; returns
        the best vertex seen.
        """
        nonlocal budget_hit
        points = [np.array(z0, dtype=float)]
        for i in range(n):
            offset = np.zeros(n)
            offset[i] = step
            points.append(z0 + offset)
        scored = [f(p) for p in points]
        values = [c for c, _ in scored]
        wvs = [wv for _, wv in scored]
        for _ in range(200 * max(n, 1)):
            if evals >= budget:
                budget_hit = True
                break
            order = np.argsort(values, kind="stable")
            points = [points[i] for i in order]
            values = [values[i] for i in order]
            wvs = [wvs[i] for i in order]
            spread = values[-1] - values[0]
            if np.isfinite(spread) and spread <= 1e-12 * (1.0 + abs(values[0])):
                break
            centroid = np.mean(points[:-1], axis=0)

            reflected = centroid + alpha * (centroid - points[-1])
            fr, wr = f(reflected)
            if fr < values[0]:
                expanded = centroid + gamma * (reflected - centroid)
                fe, we = f(expanded)
                if fe < fr:
                    points[-1], values[-1], wvs[-1] = expanded, fe, we
                else:
                    points[-1], values[-1], wvs[-1] = reflected, fr, wr
            elif fr < values[-2]:
                points[-1], values[-1], wvs[-1] = reflected, fr, wr
            else:
                contracted = centroid + rho * (points[-1] - centroid)
                fc, wc = f(contracted)
                if fc < values[-1]:
                    points[-1], values[-1], wvs[-1] = contracted, fc, wc
                else:
                    for i in range(1, len(points)):
                        points[i] = points[0] + sigma * (points[i] - points[0])
                        values[i], wvs[i] = f(points[i])
        i_best = int(np.argmin(values))
        return values[i_best], wvs[i_best], points[i_best]

    for z0 in starts:
        if evals >= budget:
            budget_hit = True
            break
        inc_cost, inc_w = f(z0)
        inc_z = np.array(z0, dtype=float)
        step = 0.4
        while evals < budget:
            c, wv, z = descend(inc_z, step)
            improved = c < inc_cost - IMPROVEMENT_TOL
            if c < inc_cost:
                inc_cost, inc_w, inc_z = c, wv, z
            if not improved:
                break
            step = max(0.5 * step, 0.02)
        else:
            budget_hit = True
        candidates.append((inc_cost, inc_w))

    best_cost = min(c for c, _ in candidates)
    window = TIE_TOL * (1.0 + abs(best_cost))
    tied = [(c, wv) for c, wv in candidates if c <= best_cost + window]
    ones = np.ones(k)
    tied.sort(key=lambda cw: (float(np.linalg.norm(cw[1].w - ones)), cw[0]))
    final_cost, final_w = tied[0]

    return SolverReport(w_star=final_w, cost_at_w_star=final_cost,
                        iterations=evals, converged=not budget_hit,
                        method=SolverMethod.SIMPLEX_SEARCH)
