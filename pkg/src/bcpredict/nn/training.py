"""Mini-batch training with best-validation-epoch selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..rng import Stream
from .network import (
    DivergenceError,
    NetworkConfig,
    Params,
    forward,
    init_params,
    loss_and_gradients,
    make_dropout_masks,
)
from .optim import make_optimizer

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_loss: float
    valid_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    params: Params | None = None
    diverged: bool = False

    def tsv(self) -> str:
        rows = ["epoch\ttrain_loss\ttrain_acc\tvalid_loss\tvalid_acc\tbest"]
        for s in self.epochs:
            rows.append(
                f"{s.epoch}\t{s.train_loss:.6f}\t{s.train_accuracy:.6f}\t{s.valid_loss:.6f}\t{s.valid_accuracy:.6f}\t{int(s.epoch == self.best_epoch)}"
            )
        return "\n".join(rows) + "\n"


def evaluate_loss(params: Params, config: NetworkConfig, X, y, batch_size: int = 512) -> tuple[float, float]:
    """Mean cross-entropy (no L2, no dropout) and accuracy."""
    if len(y) == 0:
        return float("nan"), float("nan")
    total, correct = 0.0, 0
    for s in range(0, len(y), batch_size):
        probs = forward(params, config, X[s : s + batch_size])
        yy = y[s : s + batch_size]
        total += -np.sum(np.log(np.maximum(probs[np.arange(len(yy)), yy], 1e-300)))
        correct += int(np.sum(np.argmax(probs, axis=1) == yy))
    return total / len(y), correct / len(y)


def train(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_valid: np.ndarray | None,
    y_valid: np.ndarray | None,
    config: NetworkConfig,
    epochs: int,
    batch_size: int = 64,
    patience: int = 10,
    params: Params | None = None,
) -> TrainReport:
    """Train and keep the parameters of the epoch with the lowest validation loss.

    Without validation data the training loss is used instead.  Shuffles and
    dropout masks come from streams keyed by ``config.seed`` and the epoch and
    batch numbers, so identical inputs give identical reports.  A non-finite
    loss stops training; the report then holds the epochs completed so far.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if len(y_train) == 0:
        raise ValueError("empty training set")
    params = init_params(config) if params is None else params.copy()
    opt = make_optimizer(config.optimizer, config.learning_rate)
    report = TrainReport(params=params.copy())
    has_valid = X_valid is not None and y_valid is not None and len(y_valid) > 0
    best_loss = np.inf
    since_best = 0
    n = len(y_train)
    for epoch in range(epochs):
        order = Stream(config.seed, "shuffle", epoch).permutation(n)
        drop = Stream(config.seed, "dropout", epoch)
        losses, correct = [], 0
        try:
            for b, s in enumerate(range(0, n, batch_size)):
                idx = order[s : s + batch_size]
                masks = make_dropout_masks(config, len(idx), drop.child(b))
                loss, grads = loss_and_gradients(params, config, X_train[idx], y_train[idx], masks)
                losses.append(loss * len(idx))
                opt.step(params.arrays, grads)
                if not all(np.all(np.isfinite(a)) for a in params.arrays):
                    raise DivergenceError("non-finite parameters")
        except DivergenceError as exc:
            log.warning("training diverged in epoch %d: %s", epoch, exc)
            report.diverged = True
            break
        train_loss = sum(losses) / n
        _, train_acc = evaluate_loss(params, config, X_train, y_train)
        if has_valid:
            valid_loss, valid_acc = evaluate_loss(params, config, X_valid, y_valid)
        else:
            valid_loss, valid_acc = train_loss, train_acc
        report.epochs.append(EpochStats(epoch, train_loss, train_acc, valid_loss, valid_acc))
        log.info("epoch %d train %.4f/%.3f valid %.4f/%.3f", epoch, train_loss, train_acc, valid_loss, valid_acc)
        if valid_loss < best_loss:
            best_loss = valid_loss
            report.best_epoch = epoch
            report.params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    return report
