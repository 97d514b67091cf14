"""Training loop with early stopping, plateau LR reduction, and grid search.

Validation loss is the monitored quantity everywhere: early stopping halts
after ``patience`` epochs without strict improvement and restores the best
weights; the learning rate halves after ``lr.patience`` stagnant epochs,
floored at ``lr.min_lr``. Shuffling order is a pure function of
(seed, epoch), and per-batch dropout noise of (seed, epoch, batch), so a
run is reproducible from its config alone.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import models as md
from . import tensor as tz
from .tensor import AdamState, Tensor, adam_step, assert_finite


class TrainingError(Exception):
    pass


@dataclass
class LRSchedule:
    initial: float = 1e-3
    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-5


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    lr: LRSchedule = field(default_factory=LRSchedule)
    seed: int = 0
    class_weights: bool = False

    def __post_init__(self):
        if self.patience < 1:
            raise TrainingError(f"patience must be >= 1, got {self.patience}")
        if self.lr.patience >= self.patience:
            raise TrainingError(
                f"lr reduce patience ({self.lr.patience}) must be < early-stop "
                f"patience ({self.patience})")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise TrainingError("batch_size and max_epochs must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    best_epoch: int
    stopped_early: bool
    wall_time_s: float

    @property
    def best(self) -> EpochStats:
        return self.epochs[self.best_epoch - 1]

    def to_json(self) -> str:
        # wall time is excluded here and persisted separately so that run
        # artifacts stay byte-identical across repeated runs
        payload = {
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "epochs": [vars(e) for e in self.epochs],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def curves_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr"])
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss),
                                 repr(e.train_acc), repr(e.val_acc), repr(e.lr)])


class EarlyStopping:
    """Halt after ``patience`` epochs without strict validation-loss improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.counter = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


class ReduceLROnPlateau:
    """Multiply the lr by ``factor`` after ``patience`` stagnant epochs, never below ``min_lr``."""

    def __init__(self, schedule: LRSchedule):
        self.schedule = schedule
        self.best = float("inf")
        self.counter = 0

    def update(self, val_loss: float, current_lr: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.counter = 0
            return current_lr
        self.counter += 1
        if self.counter >= self.schedule.patience:
            self.counter = 0
            return max(current_lr * self.schedule.factor, self.schedule.min_lr)
        return current_lr


def _inverse_frequency_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    weights = np.zeros(n_classes)
    present = counts > 0
    weights[present] = y.size / (present.sum() * counts[present])
    return weights


def evaluate_loss_acc(model: md.Model, x: np.ndarray, y: np.ndarray,
                      batch_size: int = 64,
                      class_weights: Optional[np.ndarray] = None) -> tuple[float, float]:
    """Eval-mode mean loss and accuracy over a labelled batch."""
    total_loss = 0.0
    correct = 0
    weight_total = 0.0
    for lo in range(0, x.shape[0], batch_size):
        xb = x[lo:lo + batch_size]
        yb = y[lo:lo + batch_size]
        probs = model.forward(Tensor(xb), mode="eval")
        loss = tz.cross_entropy_loss(probs, yb, class_weights)
        if class_weights is not None:
            w = float(class_weights[yb].sum())
        else:
            w = float(len(yb))
        total_loss += loss.item() * w
        weight_total += w
        correct += int((probs.data.argmax(axis=1) == yb).sum())
    return total_loss / weight_total, correct / x.shape[0]


def train(model: md.Model, train_data: tuple[np.ndarray, np.ndarray],
          val_data: tuple[np.ndarray, np.ndarray],
          config: TrainConfig) -> tuple[md.Model, TrainReport]:
    """Train in place; returns the model restored to its best-validation weights."""
    x_tr, y_tr = train_data
    x_va, y_va = val_data
    if x_tr.shape[0] == 0 or x_va.shape[0] == 0:
        raise TrainingError("empty train or validation split")

    params = model.parameters()
    weights = (_inverse_frequency_weights(y_tr, md.N_CLASSES)
               if config.class_weights else None)
    state = AdamState(lr=config.lr.initial)
    early = EarlyStopping(config.patience)
    plateau = ReduceLROnPlateau(config.lr)
    lr = config.lr.initial
    best_snapshot = model.snapshot()
    best_epoch = 0
    stats: list[EpochStats] = []
    stopped_early = False
    started = time.perf_counter()

    n = x_tr.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, 101, epoch]).permutation(n)
        state.lr = lr
        loss_sum = 0.0
        weight_sum = 0.0
        correct = 0
        for batch_idx, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            rng_drop = np.random.default_rng([config.seed, epoch, batch_idx])
            probs = model.forward(Tensor(x_tr[idx]), mode="train", rng=rng_drop)
            loss = tz.cross_entropy_loss(probs, y_tr[idx], weights)
            assert_finite(loss, f"training loss at epoch {epoch}")
            w = float(weights[y_tr[idx]].sum()) if weights is not None else float(len(idx))
            loss_sum += loss.item() * w
            weight_sum += w
            correct += int((probs.data.argmax(axis=1) == y_tr[idx]).sum())
            loss.backward()
            adam_step(params, state)
        val_loss, val_acc = evaluate_loss_acc(model, x_va, y_va, config.batch_size, weights)
        stats.append(EpochStats(epoch, loss_sum / weight_sum, correct / n,
                                val_loss, val_acc, lr))
        if early.update(val_loss):
            best_snapshot = model.snapshot()
            best_epoch = epoch
        lr = plateau.update(val_loss, lr)
        if early.should_stop:
            stopped_early = True
            break

    model.load_state(best_snapshot)
    report = TrainReport(stats, best_epoch, stopped_early,
                         time.perf_counter() - started)
    return model, report


GRID_AXES = ("dropout_rate", "batch_size", "learning_rate")


@dataclass
class GridEntry:
    config: dict
    val_accuracy: float
    val_loss: float
    best_epoch: int
    epochs_run: int
    seed: int

    def sort_key(self):
        values = tuple(self.config[k] for k in sorted(self.config))
        return (-self.val_accuracy, self.val_loss, values)


def grid_search(model_config: md.ModelConfig, grid: dict[str, list],
                train_data, val_data, train_config: TrainConfig,
                builder: Callable[[md.ModelConfig], md.Model] = md.build_model,
                ) -> tuple[GridEntry, list[GridEntry]]:
    """Exhaustive Cartesian search; ranks by validation accuracy, ties broken
    by lower validation loss then lexicographic config order."""
    if not grid:
        raise TrainingError("empty grid")
    for axis in grid:
        if axis not in GRID_AXES:
            raise TrainingError(f"unknown grid axis {axis!r}; supported: {GRID_AXES}")
        if not grid[axis]:
            raise TrainingError(f"grid axis {axis!r} has no values")

    axes = sorted(grid)
    leaderboard = []
    for trial_idx, values in enumerate(itertools.product(*(grid[a] for a in axes))):
        combo = dict(zip(axes, values))
        seed = int(np.random.SeedSequence([train_config.seed, trial_idx]).generate_state(1)[0])
        mcfg = replace(model_config,
                       dropout_rate=combo.get("dropout_rate", model_config.dropout_rate),
                       seed=seed)
        lr_sched = replace(train_config.lr,
                           initial=combo.get("learning_rate", train_config.lr.initial))
        tcfg = replace(train_config, lr=lr_sched, seed=seed,
                       batch_size=int(combo.get("batch_size", train_config.batch_size)))
        model = builder(mcfg)
        _, report = train(model, train_data, val_data, tcfg)
        best = report.best
        leaderboard.append(GridEntry(combo, best.val_acc, best.val_loss,
                                     report.best_epoch, len(report.epochs), seed))
    leaderboard.sort(key=GridEntry.sort_key)
    return leaderboard[0], leaderboard


def leaderboard_to_json(leaderboard: list[GridEntry]) -> str:
    return json.dumps([vars(e) for e in leaderboard], indent=2, sort_keys=True)
