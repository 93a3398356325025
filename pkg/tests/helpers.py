"""Small builders shared by the test modules."""
import math

import numpy as np

from autoscale import (
    TRACE_FIELDS,
    LossSnapshot,
    TraceLine,
    WindowBuffer,
    snapshot_from_gradients,
)


def grad_snap(vectors, iteration=0):
    return snapshot_from_gradients(np.asarray(vectors, dtype=float),
                                   iteration=iteration)


def loss_snap(losses, initial=None, prev=None, iteration=0):
    losses = np.asarray(losses, dtype=float)
    if initial is None:
        initial = losses
    if prev is None:
        prev = losses
    return LossSnapshot(losses=losses,
                        initial_losses=np.asarray(initial, dtype=float),
                        prev_losses=np.asarray(prev, dtype=float),
                        iteration=iteration)


def window(pairs, capacity=None, stride=1):
    pairs = tuple(pairs)
    return WindowBuffer(pairs=pairs,
                        capacity=capacity if capacity is not None else max(len(pairs), 1),
                        stride=stride)


def constant_window(vectors, losses=None, n=1, start_iter=0):
    """n copies of one observation at consecutive iterations."""
    pairs = []
    for t in range(start_iter, start_iter + n):
        g = grad_snap(vectors, iteration=t)
        l = loss_snap(losses if losses is not None else np.ones(g.k), iteration=t)
        pairs.append((g, l))
    return window(pairs)


def random_window(rng, k=3, d=5, n=4, start_iter=0):
    """Window of random Gaussian gradient snapshots with random positive losses."""
    pairs = []
    for t in range(start_iter, start_iter + n):
        g = grad_snap(rng.standard_normal((k, d)), iteration=t)
        l = loss_snap(rng.uniform(0.2, 2.0, size=k),
                      initial=np.ones(k),
                      prev=rng.uniform(0.2, 2.0, size=k),
                      iteration=t)
        pairs.append((g, l))
    return window(pairs)


def bits_equal(a, b):
    """Float equality down to the sign of zero."""
    return a == b and math.copysign(1.0, a) == math.copysign(1.0, b)


def random_trace_line(rng, k=3):
    """A fully-populated random trace line (valid field ranges)."""
    n_upper = k * (k + 1) // 2
    vec = lambda n: tuple(float(v) for v in rng.standard_normal(n))
    pos = lambda n: tuple(float(v) for v in np.abs(rng.standard_normal(n)) + 1e-9)
    rl = np.abs(rng.standard_normal(k)) + 1e-9
    rl = rl / rl.sum()
    return TraceLine(
        run_id=f"run-{int(rng.integers(1e6)):06d}",
        method=str(rng.choice(["autoscale", "fixed", "rlw", "unitary"])),
        cost_kind=str(rng.choice(["equal-grad-norm", "equal-loss", "low-cond", ""])),
        seed=int(rng.integers(0, 2**31)),
        config_hash=f"{int(rng.integers(0, 2**62)):016x}",
        iter=int(rng.integers(0, 10**6)),
        weights=pos(k),
        losses=pos(k),
        grad_norms=pos(k),
        gram_upper=vec(n_upper),
        gms_mean=None if rng.uniform() < 0.1 else float(rng.uniform(0, 1)),
        gcs_mean=None if rng.uniform() < 0.1 else float(rng.uniform(-1, 1)),
        cond_number=float(np.exp(rng.uniform(0, 10))),
        ilr=pos(k),
        ilr_std=float(abs(rng.standard_normal())),
        ldr=pos(k),
        rl=tuple(float(v) for v in rl),
        rl_std=float(abs(rng.standard_normal())),
        degenerate_flags=tuple(
            str(s) for s in rng.choice(["a flag", "another: (0,1)"],
                                       size=rng.integers(0, 3))),
    )


def trace_lines_identical(a, b):
    """Field-by-field equality with bitwise float comparison."""
    for name in TRACE_FIELDS:
        va, vb = getattr(a, name), getattr(b, name)
        if isinstance(va, tuple) and va and isinstance(va[0], float):
            if len(va) != len(vb) or not all(
                    bits_equal(x, y) for x, y in zip(va, vb)):
                return False
        elif isinstance(va, float) and isinstance(vb, float):
            if not bits_equal(va, vb):
                return False
        elif va != vb:
            return False
    return True


def simplex_grid(k, step=0.01):
    """Every w >= 0 on the fixed-step grid of the plane sum(w) = k.

    Grid points may touch zero; that is fine for oracle comparisons (a zero
    coordinate differs from the feasible floor by under the comparison slack).
    """
    units = round(k / step)
    if k == 2:
        i = np.arange(units + 1)
        return np.column_stack([i, units - i]).astype(float) * step
    if k == 3:
        blocks = []
        for i in range(units + 1):
            j = np.arange(units - i + 1)
            blocks.append(np.column_stack([np.full(j.size, i), j, units - i - j]))
        return np.vstack(blocks).astype(float) * step
    raise ValueError("grids are only generated for K in {2, 3}")
