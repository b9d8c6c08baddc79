"""Shared mini-batch training loop with early stopping on tune-set MAP.

Works for any model object exposing tensors()/load_tensors(), prepare(),
loss_and_grads(batch), and rank_prepared(). Keeps the checkpoint with the
best tune MAP (evaluated against the original question) and restores it at
the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .neural import AdamState, adam_step, copy_tensors
from .retrieval import CandidateSet
from .rng import substream


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


@dataclass
class TrainConfig:
    hidden_dim: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    clamp_negative_sim: bool = True


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    tune_map: float


@dataclass
class FitResult:
    tensors: dict
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_tune_map: float = 0.0


def original_mode_map(model, prepared: Sequence) -> float:
    """Mean average precision with only the original question relevant."""
    if not prepared:
        return 0.0
    total = 0.0
    for prep in prepared:
        ranked = model.rank_prepared(prep)
        rank_of_original = ranked.order.index(prep.cs.original_index) + 1
        total += 1.0 / rank_of_original
    return total / len(prepared)


def fit(
    model,
    train_sets: Sequence[CandidateSet],
    tune_sets: Sequence[CandidateSet],
    config: TrainConfig,
) -> FitResult:
    """Minimize the model's loss with Adam; return the best-MAP checkpoint."""
    if not train_sets:
        raise ValueError("training set is empty")
    if not tune_sets:
        raise ValueError("tune set is empty")
    rng = substream(config.seed, f"train/{model.name}")
    train_prepared = [model.prepare(cs) for cs in train_sets]
    tune_prepared = [model.prepare(cs) for cs in tune_sets]

    tensors = model.tensors()
    state = AdamState.fresh(tensors)
    result = FitResult(tensors=copy_tensors(tensors))
    epochs_since_best = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_prepared))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_prepared[i] for i in order[start : start + config.batch_size]]
            loss, grads = model.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, n_batches, loss)
            adam_step(tensors, grads, state, config.lr)
            epoch_loss += loss
            n_batches += 1
        tune_map = original_mode_map(model, tune_prepared)
        result.log.append(EpochLog(epoch=epoch, train_loss=epoch_loss / n_batches, tune_map=tune_map))
        if tune_map > result.best_tune_map or result.best_epoch < 0:
            result.best_tune_map = tune_map
            result.best_epoch = epoch
            result.tensors = copy_tensors(tensors)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > config.patience:
                break
    model.load_tensors(result.tensors)
    return result
