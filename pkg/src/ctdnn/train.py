"""Mini-batch training: Adam, deterministic shuffling, early stopping, curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TrainingDivergenceError, ValidationError
from .layers import softmax_ce
from .model import Model, forward_batch, loss_and_grads
from .numcore import make_rng

CURVE_HEADER = "epoch,step,train_loss,train_acc,val_loss,val_acc"


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 0.0
    seed: int = 0
    eval_every: int = 10  # record a curve row every this many batches

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.max_epochs < 1 or self.eval_every < 1:
            raise ValidationError("max_epochs and eval_every must be >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(params: list[tuple[str, np.ndarray]], lr: float) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for _, a in params],
        v=[np.zeros_like(a) for _, a in params],
        t=0,
        lr=lr,
    )


def adam_step(
    state: AdamState,
    params: list[tuple[str, np.ndarray]],
    grads: list[tuple[str, np.ndarray]],
) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for i, ((name, p), (gname, g)) in enumerate(zip(params, grads)):
        if name != gname or p.shape != g.shape:
            raise ValidationError(f"gradient '{gname}' does not line up with parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in block '{name}'")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def make_batches(dataset, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Index batches for one epoch: a shuffle keyed by (seed, epoch), chunked.

    Every index appears exactly once; the last batch may be short.
    """
    n = len(dataset)
    order = make_rng(seed, epoch).permutation(n)
    return [order[i : i + batch_size].tolist() for i in range(0, n, batch_size)]


@dataclass
class CurveRow:
    epoch: int
    step: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class LearningCurve:
    rows: list[CurveRow] = field(default_factory=list)
    epochs: list[EpochStats] = field(default_factory=list)
    monitor: str = "train_loss"
    best_epoch: int = 0
    stopped_epoch: int = 0
    diverged: bool = False
    deterministic: bool = True


def class_map_for(dataset) -> dict[str, int]:
    """Class index per speaker: rank in the sorted unique speaker ids."""
    return {s: i for i, s in enumerate(sorted({seq.speaker_id for seq in dataset}))}


def evaluate(model: Model, dataset, class_map: dict[str, int]) -> tuple[float, float]:
    """Mean cross entropy and top-1 accuracy in infer mode."""
    if not dataset:
        return math.nan, math.nan
    logits, _ = forward_batch(model, list(dataset), mode="infer")
    losses, hits = [], 0
    for z, seq in zip(logits, dataset):
        loss, _ = softmax_ce(z, class_map[seq.speaker_id])
        losses.append(loss)
        hits += int(int(np.argmax(z)) == class_map[seq.speaker_id])
    return float(np.mean(losses)), hits / len(dataset)


def fit(model: Model, train_set, val_set, config: TrainConfig) -> tuple[Model, LearningCurve]:
    """Train with Adam until early stopping or max_epochs; restores best weights.

    The monitored loss is validation loss when val_set is nonempty, training
    loss otherwise; training stops once it has failed to improve by min_delta
    for more than `patience` consecutive epochs.  A non-finite training loss
    aborts the run, keeping the last finite checkpoint, and flags the curve.
    """
    if not train_set:
        raise ValidationError("training set is empty")
    class_map = class_map_for(train_set)
    if len(class_map) != model.config.num_classes:
        raise ValidationError(
            f"{len(class_map)} training speakers but model has {model.config.num_classes} classes"
        )
    for seq in val_set or []:
        if seq.speaker_id not in class_map:
            raise ValidationError(f"validation speaker '{seq.speaker_id}' unseen in training")

    params = model.parameters()
    adam = init_adam(params, config.lr)
    curve = LearningCurve(monitor="val_loss" if val_set else "train_loss")
    snapshot = _snapshot(model)
    best_loss = math.inf
    bad_epochs = 0
    step = 0
    win_loss, win_hits, win_count = [], 0, 0

    for epoch in range(1, config.max_epochs + 1):
        ep_losses, ep_hits, ep_count = [], 0, 0
        for batch_idx in make_batches(train_set, config.batch_size, config.seed, epoch):
            batch = [train_set[i] for i in batch_idx]
            labels = [class_map[seq.speaker_id] for seq in batch]
            mean_loss, grads, hits, _ = loss_and_grads(model, batch, labels)
            if not math.isfinite(mean_loss):
                curve.diverged = True
                curve.stopped_epoch = epoch
                _restore(model, snapshot)
                return model, curve
            adam_step(adam, params, grads)
            step += 1
            ep_losses.append(mean_loss)
            ep_hits += hits
            ep_count += len(batch)
            win_loss.append(mean_loss)
            win_hits += hits
            win_count += len(batch)
            if step % config.eval_every == 0:
                val_loss, val_acc = evaluate(model, val_set, class_map)
                curve.rows.append(
                    CurveRow(
                        epoch,
                        step,
                        float(np.mean(win_loss)),
                        win_hits / win_count,
                        val_loss,
                        val_acc,
                    )
                )
                win_loss, win_hits, win_count = [], 0, 0
        train_loss = float(np.mean(ep_losses))
        train_acc = ep_hits / ep_count
        val_loss, val_acc = evaluate(model, val_set, class_map)
        curve.epochs.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc))
        monitored = val_loss if val_set else train_loss
        if monitored < best_loss - config.min_delta:
            best_loss = monitored
            curve.best_epoch = epoch
            bad_epochs = 0
            snapshot = _snapshot(model)
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                curve.stopped_epoch = epoch
                break
    else:
        curve.stopped_epoch = config.max_epochs
    _restore(model, snapshot)
    return model, curve


def _snapshot(model: Model) -> list[np.ndarray]:
    return [a.copy() for _, a in model.parameters() + model.buffers()]


def _restore(model: Model, snapshot: list[np.ndarray]) -> None:
    for (_, a), saved in zip(model.parameters() + model.buffers(), snapshot):
        a[...] = saved


def converged_epoch(curve: LearningCurve, threshold_acc: float) -> int | None:
    """First epoch whose training accuracy reaches the threshold, else None."""
    if curve.epochs:
        for ep in curve.epochs:
            if ep.train_acc >= threshold_acc:
                return ep.epoch
        return None
    # curve loaded from file: fall back to per-epoch means of the recorded rows
    by_epoch: dict[int, list[float]] = {}
    for row in curve.rows:
        by_epoch.setdefault(row.epoch, []).append(row.train_acc)
    for epoch in sorted(by_epoch):
        if float(np.mean(by_epoch[epoch])) >= threshold_acc:
            return epoch
    return None


def write_curve(path, curve: LearningCurve) -> None:
    """Comma-separated rows, one per recorded step, floats with 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CURVE_HEADER + "\n")
        for r in curve.rows:
            fh.write(
                f"{r.epoch},{r.step},{r.train_loss:.6f},{r.train_acc:.6f},"
                f"{r.val_loss:.6f},{r.val_acc:.6f}\n"
            )


def read_curve(path) -> LearningCurve:
    curve = LearningCurve()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CURVE_HEADER:
            raise FormatError(f"bad curve header '{header}'", 0)
        for line in fh:
            epoch, step, tl, ta, vl, va = line.strip().split(",")
            curve.rows.append(
                CurveRow(int(epoch), int(step), float(tl), float(ta), float(vl), float(va))
            )
    return curve
