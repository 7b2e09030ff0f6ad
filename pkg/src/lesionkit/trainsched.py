"""Learning-rate schedules, early stopping and a small epoch-loop harness.

The harness drives any object with ``train_step(batch, lr) -> loss`` and
``validate() -> loss`` methods (and optionally ``checkpoint() -> str``).
Epochs are numbered from 1.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol


class TrainingDiverged(FloatingPointError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CyclicLRConfig:
    base_lr: float = 1e-5
    max_lr: float = 1e-4
    step_size: int = 500

    def __post_init__(self):
        if not self.base_lr < self.max_lr:
            raise ValueError("base_lr must be below max_lr")
        if self.step_size < 1:
            raise ValueError("step_size must be at least 1")


@dataclass(frozen=True)
class PlateauConfig:
    start_lr: float = 1e-3
    factor: float = 0.1
    patience: int = 10
    floor_lr: float = 1e-5

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.floor_lr > self.start_lr:
            raise ValueError("floor_lr must not exceed start_lr")


@dataclass(frozen=True)
class StepLRConfig:
    start_lr: float = 1e-3
    drop_to: float = 1e-4
    drop_epoch: int = 12

    def __post_init__(self):
        if not self.drop_to < self.start_lr:
            raise ValueError("drop_to must be below start_lr")


def cyclic_lr(cfg: CyclicLRConfig, t: int) -> float:
    """Triangular cyclical learning rate at iteration ``t``."""
    if t < 0:
        raise ValueError("iteration must be non-negative")
    cycle = math.floor(1 + t / (2 * cfg.step_size))
    x = abs(t / cfg.step_size - 2 * cycle + 1)
    return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * max(0.0, 1 - x)


def step_lr(cfg: StepLRConfig, epoch: int) -> float:
    return cfg.start_lr if epoch <= cfg.drop_epoch else cfg.drop_to


@dataclass(frozen=True)
class PlateauState:
    lr: float
    best_loss: float = math.inf
    epochs_since_best: int = 0

    @classmethod
    def start(cls, cfg: PlateauConfig) -> "PlateauState":
        return cls(lr=cfg.start_lr)


def _check_loss(val_loss: float) -> None:
    if math.isnan(val_loss):
        raise TrainingDiverged("validation loss is NaN")


def plateau_lr_step(cfg: PlateauConfig, state: PlateauState, val_loss: float) -> tuple[float, PlateauState]:
    """Feed one epoch's validation loss; returns the learning rate for the next epoch.

    After ``patience`` consecutive epochs without a strictly lower loss the
    rate is multiplied by ``factor`` (never below ``floor_lr``) and the
    counter restarts.
    """
    _check_loss(val_loss)
    if val_loss < state.best_loss:
        state = replace(state, best_loss=val_loss, epochs_since_best=0)
        return state.lr, state
    waited = state.epochs_since_best + 1
    lr = state.lr
    if waited >= cfg.patience:
        lr = max(lr * cfg.factor, cfg.floor_lr)
        waited = 0
    state = replace(state, lr=lr, epochs_since_best=waited)
    return lr, state


@dataclass(frozen=True)
class EarlyStopState:
    patience: int
    best_loss: float = math.inf
    best_epoch: int = 0
    epoch: int = 0
    epochs_since_best: int = 0
    stopped: bool = False


def early_stop_update(state: EarlyStopState, val_loss: float) -> EarlyStopState:
    """Advance one epoch; stops once the loss has not improved for more than ``patience`` epochs."""
    if state.stopped:
        raise ValueError("early stopping already triggered")
    _check_loss(val_loss)
    epoch = state.epoch + 1
    if val_loss < state.best_loss:
        return replace(state, best_loss=val_loss, best_epoch=epoch, epoch=epoch, epochs_since_best=0)
    since = state.epochs_since_best + 1
    return replace(state, epoch=epoch, epochs_since_best=since, stopped=since > state.patience)


class Trainable(Protocol):
    def train_step(self, batch, lr: float) -> float: ...

    def validate(self) -> float: ...


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    is_best: bool


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_tag: str | None = None
    stopped_early: bool = False
    iterations: int = 0
    initial_val_loss: float | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_loss", "val_loss", "is_best"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_loss), int(r.is_best)])


Schedule = CyclicLRConfig | PlateauConfig | StepLRConfig | float


def _epoch_batches(plan, epoch: int) -> Iterable:
    if callable(plan):
        return plan(epoch)
    return plan


def _validate(model, epoch: int) -> float:
    try:
        val = float(model.validate())
    except Exception as exc:
        raise TrainingError(f"validate failed at epoch {epoch}: {exc}") from exc
    if math.isnan(val):
        raise TrainingDiverged(f"validation loss is NaN at epoch {epoch}")
    return val


def _checkpoint(model, epoch: int) -> str:
    checkpoint = getattr(model, "checkpoint", None)
    return checkpoint() if checkpoint else f"epoch-{epoch}"


def run_training_loop(model: Trainable, plan, sched: Schedule, stop: EarlyStopState | None,
                      max_epochs: int, on_epoch: Callable[[EpochRecord], None] | None = None,
                      validate_first: bool = True) -> TrainingLog:
    """Train ``model`` epoch by epoch until early stopping or ``max_epochs``.

    ``plan`` is an iterable of batches reused every epoch, or a callable
    ``epoch -> iterable`` for per-epoch resampling. Cyclic schedules are
    evaluated once per iteration; plateau and step schedules once per epoch.
    A plain float is a constant learning rate.

    With ``validate_first`` the untrained model is scored once as epoch 0.
    That score seeds the best loss for checkpointing, the plateau schedule
    and early stopping, so a model that never improves stops after
    ``patience + 1`` epochs and keeps its initial checkpoint.
    """
    log = TrainingLog()
    plateau = PlateauState.start(sched) if isinstance(sched, PlateauConfig) else None
    lr = sched if isinstance(sched, float) else None
    it = 0
    best = math.inf
    if validate_first and max_epochs > 0:
        best = log.initial_val_loss = _validate(model, 0)
        log.best_tag = _checkpoint(model, 0)
        if plateau is not None:
            plateau = replace(plateau, best_loss=best)
        if stop is not None:
            stop = replace(stop, best_loss=best, best_epoch=0)
    for epoch in range(1, max_epochs + 1):
        if isinstance(sched, StepLRConfig):
            lr = step_lr(sched, epoch)
        elif plateau is not None:
            lr = plateau.lr
        epoch_lr = lr
        losses = []
        for batch in _epoch_batches(plan, epoch):
            if isinstance(sched, CyclicLRConfig):
                lr = cyclic_lr(sched, it)
                if epoch_lr is None:
                    epoch_lr = lr
            try:
                losses.append(float(model.train_step(batch, lr)))
            except Exception as exc:
                raise TrainingError(f"train_step failed at epoch {epoch}, iteration {it}: {exc}") from exc
            it += 1
        val = _validate(model, epoch)
        is_best = val < best
        if is_best:
            best = val
            log.best_epoch = epoch
            log.best_tag = _checkpoint(model, epoch)
        train_loss = sum(losses) / len(losses) if losses else math.nan
        record = EpochRecord(epoch, float(epoch_lr if epoch_lr is not None else math.nan),
                             train_loss, val, is_best)
        log.epochs.append(record)
        if on_epoch:
            on_epoch(record)
        if plateau is not None:
            _, plateau = plateau_lr_step(sched, plateau, val)
        if stop is not None:
            stop = early_stop_update(stop, val)
            if stop.stopped:
                log.stopped_early = True
                break
    log.iterations = it
    return log
