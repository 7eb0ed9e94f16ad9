"""Nesterov-momentum updates and the epoch/batch training loop.

The update is the classic lookahead form: gradients are evaluated at
``theta + mu*velocity``, then ``velocity <- mu*velocity - lr*grad`` and
``theta <- theta + velocity``.  The loop realizes the lookahead by an
explicit shift of the parameter values around each gradient evaluation,
restoring the saved values exactly before the step, so ``mu=0`` reduces
bitwise to plain SGD.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import ParameterError, UsageError
from .graph import NetGraph, ParameterStore, backward_pass, forward_pass
from .layers import MODE_INFERENCE, MODE_TRAINING
from .metrics import accuracy
from .tensor import Rng


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    momentum: float = 0.9
    batch_size: int = 10
    epochs: int = 1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0,1), got {self.momentum}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")


def nesterov_step(store: ParameterStore, cfg: TrainConfig) -> None:
    """Apply ``v <- mu*v - lr*grad; theta <- theta + v`` to every slot.

    Precondition: the gradient buffers hold the gradient evaluated at the
    lookahead point theta + mu*v (see :func:`step_with_lookahead`).
    """
    for slot in store.slots.values():
        slot.velocity[...] = cfg.momentum * slot.velocity - cfg.learning_rate * slot.grad
        slot.value += slot.velocity


def step_with_lookahead(store: ParameterStore, cfg: TrainConfig,
                        eval_grads: Callable[[], object]):
    """One optimizer step around a gradient evaluation.

    ``eval_grads`` must populate ``store`` gradients at the parameter
    values it observes; it is called with the values shifted to the
    lookahead point, which are then restored exactly (saved copies, not
    arithmetic inverses) before the update is applied.
    """
    saved = {name: slot.value.copy() for name, slot in store.slots.items()}
    for slot in store.slots.values():
        slot.value += cfg.momentum * slot.velocity
    try:
        result = eval_grads()
    finally:
        for name, slot in store.slots.items():
            slot.value[...] = saved[name]
    nesterov_step(store, cfg)
    return result


def partition_batches(count: int, batch_size: int) -> List[np.ndarray]:
    """Consecutive index blocks of ``batch_size``; a short tail is kept
    only when it has at least 2 samples (batchnorm needs a pair)."""
    blocks = []
    for start in range(0, count, batch_size):
        block = np.arange(start, min(start + batch_size, count))
        if block.size >= 2 or block.size == batch_size:
            blocks.append(block)
    return blocks


def train_epoch(g: NetGraph, store: ParameterStore, split: Tuple[np.ndarray, np.ndarray],
                cfg: TrainConfig, rng: Rng) -> Tuple[float, float]:
    """One pass over the training split; returns (mean loss, accuracy)
    aggregated from the per-batch forward evaluations."""
    inputs, labels = split
    count = len(labels)
    if count == 0:
        raise UsageError("training split is empty")
    order = rng.permutation(count) if cfg.shuffle else np.arange(count)
    batches = partition_batches(count, cfg.batch_size)
    if not batches:
        raise UsageError(f"no usable batch from {count} samples at batch_size {cfg.batch_size}")
    loss_sum = 0.0
    hits = 0.0
    seen = 0
    for block in batches:
        idx = order[block]
        bx, by = inputs[idx], labels[idx]

        def eval_grads():
            loss, probs, contexts = forward_pass(g, store, bx, by, MODE_TRAINING, rng)
            backward_pass(g, store, contexts)
            return loss, probs

        loss, probs = step_with_lookahead(store, cfg, eval_grads)
        loss_sum += loss * len(by)
        hits += accuracy(probs, by) * len(by)
        seen += len(by)
    return loss_sum / seen, hits / seen


def evaluate(g: NetGraph, store: ParameterStore, split: Tuple[np.ndarray, np.ndarray],
             batch_size: int = 64):
    """Inference-mode loss/accuracy/probabilities over a split."""
    inputs, labels = split
    count = len(labels)
    if count == 0:
        raise UsageError("evaluation split is empty")
    loss_sum = 0.0
    prob_rows = []
    for start in range(0, count, batch_size):
        bx = inputs[start:start + batch_size]
        by = labels[start:start + batch_size]
        loss, probs, _ = forward_pass(g, store, bx, by, MODE_INFERENCE)
        loss_sum += loss * len(by)
        prob_rows.append(probs)
    probs = np.concatenate(prob_rows, axis=0)
    return loss_sum / count, accuracy(probs, labels), probs


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def fit(g: NetGraph, store: ParameterStore, train_split, val_split,
        cfg: TrainConfig, rng: Optional[Rng] = None) -> List[EpochRecord]:
    """Train for ``cfg.epochs`` epochs, validating in inference mode after
    each; deterministic given the seed."""
    if rng is None:
        rng = Rng(cfg.seed)
    history: List[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        train_loss, train_acc = train_epoch(g, store, train_split, cfg, rng)
        val_loss, val_acc, _ = evaluate(g, store, val_split, cfg.batch_size)
        history.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
    return history
