"""
Diagnosis with test-time augmentation
=====================================

Images are split into a holdout set and five folds without letting lesions
that share a group id straddle a split. Training draws class-balanced batches.
At test time each model sees several randomly augmented replicas and the
class probabilities are averaged.
"""
import numpy as np

from lesionkit.augment import AugmentSpec, apply_augmentation, make_tta_replicas, sample_augmentation
from lesionkit.benchmark import task3_scores
from lesionkit.manifest import balanced_batches, batch_class_counts, class_stats, make_splits
from lesionkit.synthetic import make_corpus, manifest_for

cases = make_corpus(n=200, size=64, seed=0)
m = manifest_for(cases)
counts, freqs = class_stats(m)
print("class counts", counts.tolist())

# %%
splits = make_splits(m, seed=0)
print("holdout", len(splits.holdout), "| fold 1 train/val", len(splits.ids("train_1")), len(splits.ids("val_1")))
groups = {r.image_id: r.group_id for r in m.records}
hold_groups = {groups[i] for i in splits.holdout}
leak = [i for i in splits.ids("train_1") if groups[i] in hold_groups]
print("groups crossing holdout/train:", len(leak))

# %%
# Round-robin over classes, so rare classes show up as often as common ones.
plan = balanced_batches(m, splits.ids("train_1"), batch_size=14, batches_per_epoch=3, seed=0)
for b in plan.batches:
    print("batch class counts", batch_class_counts(b, m.n_classes).tolist())

# %%
# One sampled augmentation: crop, flip, rotate, shear, scale and color jitter.
spec = AugmentSpec()
a = sample_augmentation(spec, seed=7)
print({k: round(v, 3) for k, v in vars(a).items() if isinstance(v, float)}, "hflip", a.hflip)
out = apply_augmentation(cases[0].image, a)
print("augmented", out.shape, out.dtype)

replicas = make_tta_replicas(cases[0].image, 4, seed=0)
print("replica means", [round(float(r.mean()), 1) for r in replicas])

# %%
# Three linear models, one per fold, 32 replicas each at test time.
res = task3_scores(cases, n_models=3, replicas=32)
print(f"holdout balanced accuracy {res['balanced_accuracy']:.3f}")
print(np.array(res["confusion"]))
