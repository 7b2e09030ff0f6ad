"""End-to-end runs of the three task pipelines on the synthetic corpus.

Each function takes cases from :func:`lesionkit.synthetic.make_corpus` and
scores a pipeline against the generator's own ground truth.
"""
from __future__ import annotations

import numpy as np

from .augment import AugmentSpec, apply_augmentation, sample_augmentation
from .backend import PredictorSpec, color_features, train_linear_softmax
from .ensemble import write_model_outputs
from .manifest import make_splits
from .metrics import attribute_score, balanced_accuracy, class_weights, confusion_matrix, threshold_jaccard
from .pipelines import classify_image, classify_patches, patch_id, segment_image
from .superpixel import ATTRIBUTE_CLASSES, ATTRIBUTES, compose_attribute_masks, prediction_from_scores, \
    prune_sparse_positives, slic_segment
from .synthetic import manifest_for, noisy_oracle, superpixel_truth

SEGMENTERS = (
    PredictorSpec("color_threshold_segmenter", {"threshold": 0.5, "softness": 0.05, "resolution": [64, 64]}),
    PredictorSpec("color_threshold_segmenter", {"threshold": 0.45, "softness": 0.08, "resolution": [64, 64]}),
)


def task1_scores(cases, predictors=SEGMENTERS, threshold: float = 0.5, tau: float = 0.65) -> np.ndarray:
    """Per-image threshold Jaccard of the averaged, post-processed segmenter output."""
    return np.array([threshold_jaccard(segment_image(c.image, c.image_id, predictors, threshold), c.lesion, tau)
                     for c in cases])


def attribute_truth_masks(case) -> np.ndarray:
    return np.stack([case.attribute_map == i + 1 for i in range(len(ATTRIBUTES))])


def task2_scores(cases, workdir, target_k: int = 400, noise: float = 0.1, min_count: int = 30,
                 seed: int = 0) -> dict:
    """Attribute score with and without pruning for a noisy superpixel oracle.

    The oracle's per-patch scores go through a ``file_import`` CSV keyed by
    patch id, exactly as externally computed CNN outputs would.
    """
    rng = np.random.default_rng(seed)
    maps, rows = {}, []
    for c in cases:
        sp = slic_segment(c.image, target_k)
        maps[c.image_id] = sp
        noisy = noisy_oracle(superpixel_truth(sp, c.attribute_map), noise, rng)
        onehot = np.eye(len(ATTRIBUTE_CLASSES))[noisy.classes]
        rows += [(patch_id(c.image_id, r), "oracle", onehot[r]) for r in range(sp.k)]
    path = f"{workdir}/task2_patch_scores.csv"
    write_model_outputs(path, rows, {"seed": seed, "noise": noise})
    predictor = PredictorSpec("file_import", {"path": path})
    raw, pruned, truth = [], [], []
    for c in cases:
        sp = maps[c.image_id]
        pred = prediction_from_scores(classify_patches(c.image, c.image_id, sp, predictor))
        raw.append(compose_attribute_masks(sp, pred))
        pruned.append(compose_attribute_masks(sp, prune_sparse_positives(pred, min_count)))
        truth.append(attribute_truth_masks(c))
    return {
        "unpruned": attribute_score(raw, truth),
        "pruned": attribute_score(pruned, truth),
        "mean_superpixels": float(np.mean([sp.k for sp in maps.values()])),
    }


def _fold_features(cases, n_aug: int, spec: AugmentSpec, seed: int):
    xs, ys = [], []
    for i, c in enumerate(cases):
        xs.append(color_features(c.image))
        ys.append(c.diagnosis)
        for a in range(n_aug):
            xs.append(color_features(apply_augmentation(c.image, sample_augmentation(spec, seed + 1000 * i + a))))
            ys.append(c.diagnosis)
    return np.array(xs), np.array(ys)


def task3_scores(cases, n_models: int = 3, replicas: int = 32, n_aug: int = 4, split_seed: int = 0,
                 seed: int = 0) -> dict:
    """Balanced accuracy on the holdout of a TTA mean ensemble of linear-softmax models.

    Model ``k`` trains on fold ``k`` (its training images plus ``n_aug``
    augmented copies of each) and checkpoints on the fold's validation images.
    """
    m = manifest_for(cases)
    splits = make_splits(m, seed=split_seed, holdout_frac=0.10, n_folds=max(5, n_models))
    by_id = {c.image_id: c for c in cases}
    n_classes = m.n_classes
    spec = AugmentSpec()
    predictors = []
    for k in range(1, n_models + 1):
        train = [by_id[i] for i in sorted(splits.ids(f"train_{k}"))]
        val = [by_id[i] for i in sorted(splits.ids(f"val_{k}"))]
        tx, ty = _fold_features(train, n_aug, spec, seed + 100_000 * k)
        vx, vy = _fold_features(val, 0, spec, seed)
        w = class_weights(np.bincount(ty, minlength=n_classes))
        predictor, _ = train_linear_softmax(tx, ty, vx, vy, n_classes, w, seed=seed + k)
        predictors.append(predictor)
    holdout = [by_id[i] for i in sorted(splits.holdout)]
    y_true = [c.diagnosis for c in holdout]
    y_pred = [int(np.argmax(classify_image(c.image, c.image_id, predictors, replicas, seed=seed)))
              for c in holdout]
    cm = confusion_matrix(y_true, y_pred, n_classes)
    return {"balanced_accuracy": balanced_accuracy(cm), "holdout_counts": cm.sum(axis=1).tolist(),
            "confusion": cm.tolist()}
