"""Dense float64 primitives, seeded RNG streams, and a finite-difference gradient checker.

Matrices throughout the package are plain 2-d float64 numpy arrays, row-major.
All reductions run single-threaded through numpy, so identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


from .errors import EmptyInputError, EvaluationError, ShapeError


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator keyed by (seed, *stream).

    PCG64 is a publicly specified 64-bit generator, so streams are portable.
    Extra stream keys give independent, reproducible substreams (e.g. one per
    epoch) without consuming draws from the parent stream.
    """
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def rowwise_mean_std(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population standard deviation over the rows of x.

    Population convention: divide by the row count, not rows-1, so a single
    row yields zero deviation.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {x.shape}")
    if x.shape[0] < 1:
        raise EmptyInputError("mean/std need at least one row")
    mean = x.mean(axis=0)
    std = np.sqrt(np.mean((x - mean) ** 2, axis=0))
    return mean, std


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    analytic_grad: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative disagreement between central differences and an analytic gradient.

    For each coordinate i, g_fd = (f(x+h*e_i) - f(x-h*e_i)) / (2h) and the
    relative error is |g_fd - g_an| / max(|g_fd|, |g_an|, 1e-12).  Returns the
    worst coordinate.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    g_an = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if x0.shape != g_an.shape:
        raise ShapeError(f"gradient shape {g_an.shape} does not match point shape {x0.shape}")
    worst = 0.0
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value while probing coordinate {i}")
        g_fd = (fp - fm) / (2.0 * h)
        denom = max(abs(g_fd), abs(g_an[i]), 1e-12)
        worst = max(worst, abs(g_fd - g_an[i]) / denom)
    return worst
