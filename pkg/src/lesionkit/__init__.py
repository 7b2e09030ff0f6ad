"""Deterministic building blocks for a three-task skin-lesion analysis pipeline.

Modules: ``manifest`` (splits, class statistics, balanced batches),
``imgops`` (resize, normalization, hole filling), ``augment`` (training
augmentation and test-time replicas), ``superpixel`` (SLIC, patches,
attribute masks), ``metrics``, ``trainsched`` (learning-rate schedules,
early stopping, epoch loop), ``ensemble`` (averaging and the boosted-tree
stacker), ``backend`` (pluggable predictors), ``synthetic`` (a lesion
corpus with known ground truth) and ``cli``.
"""

__version__ = "0.1.0"

# Official test-set results reported for the original submissions; kept for
# reference only, nothing here attempts to reproduce them.
REFERENCE_RESULTS = {
    "segmentation_threshold_jaccard": (0.694, 0.686, 0.728),
    "attribute_jaccard": (0.344, 0.337, 0.323),
    "diagnosis_balanced_accuracy": (0.732, 0.725, 0.803),
}
