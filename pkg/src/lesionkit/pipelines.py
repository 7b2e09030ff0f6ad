"""Per-image task pipelines composed from the library operations."""
from __future__ import annotations

import numpy as np

from .augment import AugmentSpec, average_replica_predictions, make_tta_replicas
from .backend import PredictorSpec, predict_class, predict_mask
from .ensemble import mean_ensemble_probs
from .imgops import postprocess_segmentation
from .superpixel import (SuperpixelMap, compose_attribute_masks, extract_patch, prediction_from_scores,
                         prune_low_scores, prune_sparse_positives, slic_segment)

# replica counts: Task 2 test, Task 3 holdout, Task 3 final test
DEFAULT_REPLICAS = {"flips_color_only": 16, "holdout": 32, "full_scenario_j": 128}


def segment_image(img, image_id, predictors, threshold: float = 0.5, order: str = "binarize-first"):
    """Average the predictors' probability masks and post-process at the image's size."""
    probs = [predict_mask(p, img, image_id) for p in predictors]
    h, w = np.asarray(img).shape[:2]
    return postprocess_segmentation(probs, (w, h), threshold, order)


def patch_id(image_id: str, region: int) -> str:
    return f"{image_id}:{region}"


def classify_patches(img, image_id, sp: SuperpixelMap, predictor: PredictorSpec, patch_size: int = 128,
                     replicas: int = 16, seed: int = 0, spec: AugmentSpec | None = None) -> np.ndarray:
    """``(K, 6)`` scores, one row per superpixel-centered patch.

    Imported predictions are looked up by patch id ``<image_id>:<region>``;
    built-in predictors see ``replicas`` flip/color-jitter copies of each patch.
    """
    rows = []
    for region in range(sp.k):
        if predictor.kind == "file_import":
            rows.append(predict_class(predictor, image_id=patch_id(image_id, region)))
            continue
        patch = extract_patch(img, sp, region, patch_size)
        reps = make_tta_replicas(patch, replicas, "flips_color_only", seed, spec)
        rows.append(average_replica_predictions(predict_class(predictor, r) for r in reps))
    return np.array(rows)


def attribute_image(img, image_id, predictor: PredictorSpec, target_k: int = 1000, compactness: float = 10.0,
                    iters: int = 10, patch_size: int = 128, replicas: int = 16, min_count: int | None = 30,
                    prune_mode: str = "count", min_score: float = 0.5, seed: int = 0,
                    spec: AugmentSpec | None = None):
    """Superpixels, patch classification, pruning and mask composition for one image.

    Returns ``(superpixel map, final prediction, (5, H, W) masks)``. Pass
    ``min_count=None`` to skip pruning.
    """
    sp = slic_segment(img, target_k, compactness, iters)
    scores = classify_patches(img, image_id, sp, predictor, patch_size, replicas, seed, spec)
    pred = prediction_from_scores(scores)
    if min_count is not None:
        if prune_mode == "count":
            pred = prune_sparse_positives(pred, min_count)
        elif prune_mode == "score":
            pred = prune_low_scores(pred, min_score)
        else:
            raise ValueError(f"unknown prune mode {prune_mode!r}")
    return sp, pred, compose_attribute_masks(sp, pred)


def classify_image(img, image_id, predictors, replicas: int = 1, mode: str = "full_scenario_j", seed: int = 0,
                   spec: AugmentSpec | None = None, size=None) -> np.ndarray:
    """Mean over models of each model's replica-averaged probabilities.

    With ``replicas=1`` the image is used as is, which is how single-replica
    validation is scored.
    """
    if replicas <= 1:
        per_model = [predict_class(p, img, image_id) for p in predictors]
        return mean_ensemble_probs(per_model)
    reps = make_tta_replicas(img, replicas, mode, seed, spec, size)
    per_model = []
    for p in predictors:
        if p.kind == "file_import":
            per_model.append(predict_class(p, image_id=image_id))
        else:
            per_model.append(average_replica_predictions(predict_class(p, r, image_id) for r in reps))
    return mean_ensemble_probs(per_model)
