"""
Learning-rate schedules and ensemble stacking
=============================================

A look at the three schedules, how early stopping interacts with the training
loop, and how a boosted-tree stacker combines several models' class scores.
"""
import numpy as np

from lesionkit.ensemble import fit_stacker, mean_ensemble_probs, predict_stacker, select_top_models, \
    stacker_loss, truncate_stacker
from lesionkit.metrics import balanced_accuracy, confusion_matrix
from lesionkit.synthetic import make_model_outputs
from lesionkit.trainsched import CyclicLRConfig, EarlyStopState, PlateauConfig, StepLRConfig, cyclic_lr, \
    run_training_loop, step_lr

# %%
cyc = CyclicLRConfig()
print("cyclic", [cyclic_lr(cyc, t) for t in (0, 250, 500, 750, 1000)])
print("step  ", [step_lr(StepLRConfig(), e) for e in (1, 12, 13)])


# %%
# A model whose validation loss falls for 5 epochs and then flattens.
class Toy:
    def __init__(self):
        self.calls = 0

    def train_step(self, batch, lr):
        return 1.0

    def validate(self):
        self.calls += 1
        return max(1.0 - 0.1 * (self.calls - 1), 0.5)


log = run_training_loop(Toy(), [None], PlateauConfig(patience=3), EarlyStopState(patience=6), max_epochs=50)
print("epochs run", len(log.epochs), "best", log.best_epoch, "stopped early", log.stopped_early)
print("lrs", [r.lr for r in log.epochs])

# %%
# Four models of increasing skill; the stacker learns whom to trust.
X, y = make_model_outputs(n=400, n_models=4, n_classes=4, seed=0)
tr, te = slice(0, 300), slice(300, None)


def bacc(pred, truth):
    return balanced_accuracy(confusion_matrix(truth, pred, 4))


for k in range(4):
    print(f"model {k}: {bacc(X[te, 4 * k:4 * k + 4].argmax(1), y[te]):.3f}")
per_model = {f"m{k}": bacc(X[tr, 4 * k:4 * k + 4].argmax(1), y[tr]) for k in range(4)}
top = select_top_models(per_model, 2)
cols = np.concatenate([np.arange(4 * int(t[1:]), 4 * int(t[1:]) + 4) for t in top])
mean2 = mean_ensemble_probs([X[te][:, cols[:4]], X[te][:, cols[4:]]])
print("top-2 mean", top, f"{bacc(mean2.argmax(1), y[te]):.3f}")

st = fit_stacker(X[tr], y[tr], rounds=40, shrinkage=0.1)
print(f"stacker {bacc(predict_stacker(st, X[te]).argmax(1), y[te]):.3f}")
for r in (0, 10, 40):
    print(f"  rounds {r:2d}: train loss {stacker_loss(truncate_stacker(st, r), X[tr], y[tr]):.4f}")
