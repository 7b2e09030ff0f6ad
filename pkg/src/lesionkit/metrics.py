"""Losses and evaluation metrics for the three lesion tasks."""
from __future__ import annotations

import numpy as np

EPS = 1e-7
# ISIC 2018 Task 1 cutoff
DEFAULT_TAU = 0.65


def _check_same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def jaccard(a, b) -> float:
    """Intersection over union of two binary masks; two empty masks score 1.0."""
    _check_same_shape(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def threshold_jaccard(a, b, tau: float = DEFAULT_TAU) -> float:
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    j = jaccard(a, b)
    return j if j >= tau else 0.0


def soft_jaccard(p, g, eps: float = EPS) -> float:
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    inter = (p * g).sum()
    return inter / (p.sum() + g.sum() - inter + eps)


def bce_soft_jaccard_loss(p, g, jaccard_weight: float = 1.0, eps: float = EPS) -> float:
    """Mean binary cross-entropy minus ``jaccard_weight * log(soft Jaccard + eps)``.

    ``p`` is clamped to ``[eps, 1 - eps]`` before both terms are evaluated.
    """
    _check_same_shape(p, g)
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    g = np.asarray(g, dtype=np.float64)
    bce = -(g * np.log(p) + (1 - g) * np.log(1 - p)).mean()
    if jaccard_weight == 0:
        return float(bce)
    return float(bce - jaccard_weight * np.log(soft_jaccard(p, g, eps) + eps))


def bce_soft_jaccard_grad(p, g, jaccard_weight: float = 1.0, eps: float = EPS) -> np.ndarray:
    """Analytic gradient of :func:`bce_soft_jaccard_loss` w.r.t. ``p`` (inside the clamp range)."""
    _check_same_shape(p, g)
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    inside = (p > eps) & (p < 1 - eps)
    pc = np.clip(p, eps, 1 - eps)
    grad = (-(g / pc) + (1 - g) / (1 - pc)) / p.size
    if jaccard_weight:
        inter = (pc * g).sum()
        den = pc.sum() + g.sum() - inter + eps
        sj = inter / den
        d_sj = (g * den - inter * (1 - g)) / den**2
        grad = grad - jaccard_weight * d_sj / (sj + eps)
    return np.where(inside, grad, 0.0)


def class_weights(counts) -> np.ndarray:
    """Weight of class ``c`` = count of the most common class / count of ``c``."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("no classes")
    if np.any(counts < 1):
        bad = np.flatnonzero(counts < 1).tolist()
        raise ValueError(f"class(es) {bad} have no examples; merge or drop them first")
    return counts.max() / counts


def weighted_cross_entropy(probs, labels, weights=None, eps: float = EPS) -> float:
    """``mean_i w[y_i] * -log p_i[y_i]`` with probabilities clamped to ``[eps, 1]``."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = probs.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in 0..{c - 1}")
    w = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    picked = np.clip(probs[np.arange(n), labels], eps, 1.0)
    return float(np.mean(w[labels] * -np.log(picked)))


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions. Matrices from shards can simply be added."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def balanced_accuracy(cm) -> float:
    """Mean per-class recall (normalized multi-class accuracy)."""
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    if np.any(support == 0):
        raise ValueError(f"class(es) {np.flatnonzero(support == 0).tolist()} have no samples")
    return float(np.mean(np.diag(cm) / support))


def attribute_score(pred_masks, gt_masks, pooled: bool = True) -> float:
    """Mean Jaccard over the five attributes.

    ``pred_masks`` and ``gt_masks`` are sequences (one entry per image) of
    ``(5, H, W)`` boolean stacks. With ``pooled=True`` pixels of every image
    are pooled per attribute before the Jaccard is taken; otherwise the
    per-image Jaccards are averaged per attribute first.
    """
    pred_masks = [np.asarray(m, dtype=bool) for m in pred_masks]
    gt_masks = [np.asarray(m, dtype=bool) for m in gt_masks]
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"{len(pred_masks)} predictions for {len(gt_masks)} ground truths")
    if not pred_masks:
        raise ValueError("empty image set")
    n_attr = pred_masks[0].shape[0]
    scores = []
    for k in range(n_attr):
        if pooled:
            inter = union = 0
            for p, g in zip(pred_masks, gt_masks):
                _check_same_shape(p, g)
                inter += np.count_nonzero(p[k] & g[k])
                union += np.count_nonzero(p[k] | g[k])
            scores.append(1.0 if union == 0 else inter / union)
        else:
            scores.append(np.mean([jaccard(p[k], g[k]) for p, g in zip(pred_masks, gt_masks)]))
    return float(np.mean(scores))
