"""Layer forward/backward passes: time delay, crossed time delay, statistical
pooling/concatenation, fully connected, batch norm, ReLU, softmax cross entropy.

Sequences are (T, D) float64 matrices, one row per frame.  Time-delay units use
valid-window semantics: no padding, so a span-S context turns T frames into
T - S + 1 output frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInputError,
    InsufficientStatsError,
    LabelError,
    SequenceTooShortError,
    ShapeError,
    TopologyError,
)
from .numcore import rowwise_mean_std


@dataclass(frozen=True)
class ContextWindow:
    """Inclusive frame-offset window [left, right] read by a time-delay unit."""

    left: int
    right: int

    def __post_init__(self):
        if self.left > self.right:
            raise ValueError(f"context [{self.left},{self.right}] has left > right")

    @property
    def span(self) -> int:
        return self.right - self.left + 1

    def __str__(self) -> str:
        return f"{self.left}:{self.right}"


@dataclass
class TimeDelayUnit:
    """One 1-d filter scanning the sequence with shared weights.

    weights has shape (out_dim, span * in_dim): the window's frames are
    concatenated oldest-first into a single vector per output position.
    """

    ctx: ContextWindow
    weights: np.ndarray
    bias: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1] // self.ctx.span


@dataclass
class CrossedTimeDelayLayer:
    """Parallel time-delay units, one output branch per unit."""

    units: list[TimeDelayUnit]

    def __post_init__(self):
        if not self.units:
            raise TopologyError("crossed layer needs at least one unit")


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5
    mode: str = "train"


def init_batchnorm(dim: int) -> BatchNormState:
    return BatchNormState(
        gamma=np.ones(dim),
        beta=np.zeros(dim),
        running_mean=np.zeros(dim),
        running_var=np.ones(dim),
    )


def _unroll_windows(x: np.ndarray, span: int) -> np.ndarray:
    """(T, D) -> (T-span+1, span*D): each row is span consecutive frames, oldest first."""
    t_out = x.shape[0] - span + 1
    return np.concatenate([x[k : k + t_out] for k in range(span)], axis=1)


def td_forward(unit: TimeDelayUnit, x: np.ndarray) -> np.ndarray:
    """Scan x with the unit's shared filter; returns (T - span + 1, out_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != unit.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match unit input dim {unit.in_dim}")
    span = unit.ctx.span
    if x.shape[0] < span:
        raise SequenceTooShortError(
            f"sequence has {x.shape[0]} frames, context span {span} needs at least {span}"
        )
    win = _unroll_windows(x, span)
    return win @ unit.weights.T + unit.bias


def td_backward(
    unit: TimeDelayUnit, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar loss wrt (weights, bias, x).

    Weight gradients accumulate over every window position (weight sharing).
    """
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    span = unit.ctx.span
    t_out = x.shape[0] - span + 1
    if grad_out.shape != (t_out, unit.out_dim):
        raise ShapeError(
            f"upstream gradient shape {grad_out.shape}, expected {(t_out, unit.out_dim)}"
        )
    win = _unroll_windows(x, span)
    grad_w = grad_out.T @ win
    grad_b = grad_out.sum(axis=0)
    grad_win = grad_out @ unit.weights
    grad_x = np.zeros_like(x)
    d = unit.in_dim
    for k in range(span):
        grad_x[k : k + t_out] += grad_win[:, k * d : (k + 1) * d]
    return grad_w, grad_b, grad_x


def td_forward_multi(
    unit: TimeDelayUnit, xs: list[np.ndarray]
) -> tuple[list[np.ndarray], tuple]:
    """td_forward over several sequences with one shared matmul.

    Returns per-sequence outputs and a cache (stacked windows + row counts)
    that td_backward_multi reuses instead of re-unrolling.
    """
    span = unit.ctx.span
    for x in xs:
        if x.shape[0] < span:
            raise SequenceTooShortError(
                f"sequence has {x.shape[0]} frames, context span {span} needs at least {span}"
            )
    wins = [_unroll_windows(x, span) for x in xs]
    lengths = [w.shape[0] for w in wins]
    big = wins[0] if len(wins) == 1 else np.concatenate(wins, axis=0)
    out = big @ unit.weights.T + unit.bias
    return _split_rows(out, lengths), (big, lengths)


def td_backward_multi(
    unit: TimeDelayUnit, cache: tuple, grad_outs: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Batched counterpart of td_backward; parameter grads sum over the batch."""
    big, lengths = cache
    g = grad_outs[0] if len(grad_outs) == 1 else np.concatenate(grad_outs, axis=0)
    grad_w = g.T @ big
    grad_b = g.sum(axis=0)
    grad_win = _split_rows(g @ unit.weights, lengths)
    span, d = unit.ctx.span, unit.in_dim
    grad_xs = []
    for gw_rows, t_out in zip(grad_win, lengths):
        gx = np.zeros((t_out + span - 1, d))
        for k in range(span):
            gx[k : k + t_out] += gw_rows[:, k * d : (k + 1) * d]
        grad_xs.append(gx)
    return grad_w, grad_b, grad_xs


def ctd_forward(
    layer: CrossedTimeDelayLayer, inputs: np.ndarray | list[np.ndarray]
) -> list[np.ndarray]:
    """Run every unit; a single matrix is fed to all units, a list maps one per branch."""
    xs = _ctd_inputs(layer, inputs)
    return [td_forward(unit, x) for unit, x in zip(layer.units, xs)]


def ctd_backward(
    layer: CrossedTimeDelayLayer,
    inputs: np.ndarray | list[np.ndarray],
    grad_outs: list[np.ndarray],
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray | list[np.ndarray]]:
    """Per-unit (grad_weights, grad_bias) and the gradient wrt the layer input.

    When all units share one input matrix the input gradient sums over units.
    """
    shared = isinstance(inputs, np.ndarray)
    xs = _ctd_inputs(layer, inputs)
    if len(grad_outs) != len(layer.units):
        raise TopologyError(f"{len(grad_outs)} upstream gradients for {len(layer.units)} units")
    unit_grads = []
    input_grads = []
    for unit, x, g in zip(layer.units, xs, grad_outs):
        gw, gb, gx = td_backward(unit, x, g)
        unit_grads.append((gw, gb))
        input_grads.append(gx)
    if shared:
        total = input_grads[0]
        for gx in input_grads[1:]:
            total = total + gx
        return unit_grads, total
    return unit_grads, input_grads


def _ctd_inputs(layer, inputs):
    n = len(layer.units)
    if isinstance(inputs, np.ndarray):
        return [inputs] * n
    if len(inputs) == 1:
        return list(inputs) * n
    if len(inputs) != n:
        raise TopologyError(f"{len(inputs)} input branches for {n} units")
    return list(inputs)


def sp_forward(x: np.ndarray) -> np.ndarray:
    """Pool a (T, H) sequence into [mean_1..H, std_1..H] over time."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise EmptyInputError("statistical pooling needs at least one frame")
    mean, std = rowwise_mean_std(x)
    return np.concatenate([mean, std])


def sp_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of sp_forward wrt x; std has subgradient 0 where the deviation is 0."""
    x = np.asarray(x, dtype=np.float64)
    t, h = x.shape
    if grad_out.shape != (2 * h,):
        raise ShapeError(f"pooling gradient shape {grad_out.shape}, expected {(2 * h,)}")
    g_mean, g_std = grad_out[:h], grad_out[h:]
    mean, std = rowwise_mean_std(x)
    coeff = np.where(std > 0.0, g_std / np.where(std > 0.0, t * std, 1.0), 0.0)
    return g_mean / t + (x - mean) * coeff


def sc_forward(branches: list[np.ndarray]) -> np.ndarray:
    """Pool each branch independently and concatenate in branch order."""
    if not branches:
        raise EmptyInputError("statistical concatenation needs at least one branch")
    parts = []
    for i, b in enumerate(branches):
        b = np.asarray(b, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] < 1:
            raise EmptyInputError(f"branch {i} is empty")
        parts.append(sp_forward(b))
    return np.concatenate(parts)


def sc_backward(branches: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
    grads = []
    offset = 0
    for b in branches:
        width = 2 * b.shape[1]
        grads.append(sp_backward(b, grad_out[offset : offset + width]))
        offset += width
    if offset != grad_out.size:
        raise ShapeError(f"gradient length {grad_out.size} does not match branches ({offset})")
    return grads


def fc_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine map w @ x + b on a vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot apply {w.shape} weights to input of shape {x.shape}")
    return w @ x + b


def fc_backward(
    w: np.ndarray, b: np.ndarray, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape != (w.shape[0],):
        raise ShapeError(f"upstream gradient shape {grad_out.shape}, expected {(w.shape[0],)}")
    grad_w = np.outer(grad_out, x)
    grad_b = grad_out.copy()
    grad_x = w.T @ grad_out
    return grad_w, grad_b, grad_x


def bn_forward(
    state: BatchNormState, batch: list[np.ndarray], update_running: bool = True
) -> tuple[list[np.ndarray], tuple | None]:
    """Normalize per feature over all frames of all sequences in the batch.

    Train mode uses batch statistics and folds them into the running estimates
    with the state's momentum (population variance throughout); infer mode uses
    the running estimates.  Returns the normalized batch and, in train mode,
    the cache bn_backward needs.
    """
    if not batch:
        raise EmptyInputError("batch norm got an empty batch")
    dim = state.gamma.shape[0]
    for x in batch:
        if x.ndim != 2 or x.shape[1] != dim:
            raise ShapeError(f"batch entry shape {x.shape} does not match feature dim {dim}")
    if state.mode == "infer":
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        out = [state.gamma * ((x - state.running_mean) * inv) + state.beta for x in batch]
        return out, None
    lengths = [x.shape[0] for x in batch]
    total = sum(lengths)
    if total < 2:
        raise InsufficientStatsError(f"train-mode batch norm needs >= 2 frames, got {total}")
    stacked = np.concatenate(batch, axis=0)
    mean = stacked.mean(axis=0)
    var = stacked.var(axis=0)
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (stacked - mean) * inv
    out_stacked = state.gamma * xhat + state.beta
    if update_running:
        m = state.momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mean
        state.running_var *= 1.0 - m
        state.running_var += m * var
    out = _split_rows(out_stacked, lengths)
    return out, (xhat, inv, lengths)


def bn_backward(
    state: BatchNormState, cache: tuple, grad_batch: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Train-mode batch-norm gradients for (gamma, beta, inputs)."""
    xhat, inv, lengths = cache
    g = np.concatenate(grad_batch, axis=0)
    if g.shape != xhat.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match cached batch {xhat.shape}")
    n = g.shape[0]
    grad_gamma = (g * xhat).sum(axis=0)
    grad_beta = g.sum(axis=0)
    g_xhat = g * state.gamma
    grad_in = (inv / n) * (
        n * g_xhat - g_xhat.sum(axis=0) - xhat * (g_xhat * xhat).sum(axis=0)
    )
    return grad_gamma, grad_beta, _split_rows(grad_in, lengths)


def _split_rows(stacked: np.ndarray, lengths: list[int]) -> list[np.ndarray]:
    out = []
    start = 0
    for n in lengths:
        out.append(stacked[start : start + n])
        start += n
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is defined as 0
    return np.where(x > 0.0, grad_out, 0.0)


def softmax_ce(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stabilized softmax cross entropy: loss and gradient wrt the logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ShapeError(f"logits must be a vector of >= 2 classes, got shape {z.shape}")
    if not 0 <= label < z.size:
        raise LabelError(f"label {label} outside [0, {z.size})")
    shifted = z - z.max()
    expz = np.exp(shifted)
    total = expz.sum()
    loss = float(np.log(total) - shifted[label])
    grad = expz / total
    grad[label] -= 1.0
    return loss, grad
