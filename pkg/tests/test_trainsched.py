import math

import pytest

from lesionkit.trainsched import (CyclicLRConfig, EarlyStopState, PlateauConfig, PlateauState, StepLRConfig,
                                  TrainingDiverged, TrainingError, cyclic_lr, early_stop_update,
                                  plateau_lr_step, run_training_loop, step_lr)


def triangular(base, peak, step, t):
    # independent restatement: distance to the nearest peak, as a fraction of step
    phase = t % (2 * step)
    up = phase if phase <= step else 2 * step - phase
    return base + (peak - base) * (up / step)


def test_cyclic_anchors():
    cfg = CyclicLRConfig()
    assert cyclic_lr(cfg, 0) == 1e-5
    assert cyclic_lr(cfg, 500) == 1e-4
    assert cyclic_lr(cfg, 250) == 5.5e-5
    for t in (0, 250, 500, 750, 1000, 1500):
        assert cyclic_lr(cfg, t) == pytest.approx(triangular(1e-5, 1e-4, 500, t), rel=1e-12)


def test_cyclic_periodic_and_bounded():
    cfg = CyclicLRConfig(base_lr=0.1, max_lr=0.5, step_size=7)
    vals = [cyclic_lr(cfg, t) for t in range(14)]
    assert min(vals) == 0.1 and max(vals) == 0.5
    for t in range(60):
        assert cyclic_lr(cfg, t) == pytest.approx(cyclic_lr(cfg, t + 14), abs=1e-15)
    with pytest.raises(ValueError):
        cyclic_lr(cfg, -1)
    with pytest.raises(ValueError):
        CyclicLRConfig(base_lr=1.0, max_lr=0.5)


def test_step_lr():
    cfg = StepLRConfig()
    assert [step_lr(cfg, e) for e in (1, 12, 13, 30)] == [1e-3, 1e-3, 1e-4, 1e-4]


def run_plateau(cfg, state, losses):
    lrs = []
    for v in losses:
        lr, state = plateau_lr_step(cfg, state, v)
        lrs.append(lr)
    return lrs, state


def test_plateau_decreasing_keeps_lr():
    lrs, _ = run_plateau(PlateauConfig(), PlateauState.start(PlateauConfig()), [1 / (e + 1) for e in range(40)])
    assert set(lrs) == {1e-3}


def test_plateau_drop_on_tenth_flat_epoch():
    cfg = PlateauConfig()
    state = PlateauState(lr=1e-3, best_loss=1.0)
    lrs, _ = run_plateau(cfg, state, [1.0] * 10)
    assert lrs == [1e-3] * 9 + [1e-4]


def test_plateau_thirty_flat_epochs():
    cfg = PlateauConfig()
    lrs, _ = run_plateau(cfg, PlateauState(lr=1e-3, best_loss=1.0), [1.0] * 30)
    assert lrs == [1e-3] * 9 + [1e-4] * 10 + [1e-5] * 11
    more, _ = run_plateau(cfg, PlateauState(lr=1e-3, best_loss=1.0), [1.0] * 80)
    assert min(more) == 1e-5 and all(a >= b for a, b in zip(more, more[1:]))


def test_plateau_nan():
    with pytest.raises(TrainingDiverged):
        plateau_lr_step(PlateauConfig(), PlateauState.start(PlateauConfig()), math.nan)


def run_stop(patience, losses):
    s = EarlyStopState(patience)
    for v in losses:
        s = early_stop_update(s, v)
        if s.stopped:
            break
    return s


def test_early_stop_improving_never_stops():
    assert not run_stop(3, [1 / (e + 1) for e in range(100)]).stopped


@pytest.mark.parametrize("patience", [20, 22])
def test_early_stop_constant(patience):
    s = run_stop(patience, [1.0] * 200)
    assert s.stopped and s.best_epoch == 1 and s.epoch == 1 + patience + 1
    assert s.epochs_since_best == patience + 1


def test_early_stop_dip():
    s = run_stop(3, [5, 4, 3, 2, 1] + [1] * 20)
    assert s.stopped and s.epoch == 9 and s.best_epoch == 5
    with pytest.raises(ValueError):
        early_stop_update(s, 0.5)
    with pytest.raises(TrainingDiverged):
        early_stop_update(EarlyStopState(3), math.nan)


class Scripted:
    def __init__(self, losses):
        self.losses = list(losses)
        self.calls = 0
        self.train_calls = 0

    def train_step(self, batch, lr):
        self.train_calls += 1
        return 0.0

    def validate(self):
        v = self.losses[min(self.calls, len(self.losses) - 1)]
        self.calls += 1
        return v


def test_harness_always_improving():
    m = Scripted([10, 3, 2, 1])
    log = run_training_loop(m, [[0], [1]], 0.1, EarlyStopState(5), max_epochs=3)
    assert [r.epoch for r in log.epochs] == [1, 2, 3]
    assert log.best_epoch == 3 and log.best_tag == "epoch-3" and log.iterations == 6


def test_harness_constant_patience_two():
    m = Scripted([1.0])
    log = run_training_loop(m, [[0]], 0.1, EarlyStopState(2), max_epochs=50)
    assert log.stopped_early and len(log.epochs) == 3 and log.epochs[-1].epoch == 3
    assert log.best_epoch == 0 and log.best_tag == "epoch-0"
    # nothing is trained after the stop decision
    assert m.train_calls == 3


class Bowl:
    """f(w) = (w - 3)^2 with a plain gradient step."""

    def __init__(self):
        self.w = 0.0

    def train_step(self, batch, lr):
        self.w -= lr * 2 * (self.w - 3)
        return (self.w - 3) ** 2

    def validate(self):
        return (self.w - 3) ** 2


def test_harness_quadratic_bowl():
    m = Bowl()
    log = run_training_loop(m, [None] * 10, PlateauConfig(start_lr=0.1, patience=3, floor_lr=1e-3),
                            EarlyStopState(20), max_epochs=30)
    assert log.epochs[-1].val_loss < 1e-6


def test_harness_schedule_granularity():
    seen = []

    class Rec(Scripted):
        def train_step(self, batch, lr):
            seen.append(lr)
            return 0.0

    run_training_loop(Rec([1.0 / (i + 1) for i in range(10)]), [0] * 4, CyclicLRConfig(0.0, 1.0, 2), None, 2)
    assert seen == [cyclic_lr(CyclicLRConfig(0.0, 1.0, 2), t) for t in range(8)]
    seen.clear()
    log = run_training_loop(Rec([1.0 / (i + 1) for i in range(20)]), [0, 0], StepLRConfig(1.0, 0.5, 2), None, 4)
    assert seen == [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]
    assert [r.lr for r in log.epochs] == [1.0, 1.0, 0.5, 0.5]


def test_harness_error_context_and_nan():
    class Boom(Scripted):
        def train_step(self, batch, lr):
            raise RuntimeError("bad batch")

    with pytest.raises(TrainingError, match="epoch 1, iteration 0"):
        run_training_loop(Boom([1.0]), [[0]], 0.1, None, 2)
    with pytest.raises(TrainingDiverged):
        run_training_loop(Scripted([1.0, math.nan]), [[0]], 0.1, None, 3)


def test_log_csv(tmp_path):
    log = run_training_loop(Scripted([3, 2, 1]), [[0]], 0.1, None, 2)
    log.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_loss,is_best" and len(lines) == 3
