"""SLIC superpixels, centered patch extraction and attribute-mask composition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from skimage.color import rgb2lab
from skimage.measure import label as connected_components

from .imgops import as_float_image

ATTRIBUTES = ("pigment_network", "negative_network", "streaks", "milia_like_cyst", "globules")
# class 0 is "absent"; attribute i lives at class index i + 1
ATTRIBUTE_CLASSES = ("absent",) + ATTRIBUTES


@dataclass(frozen=True)
class SuperpixelMap:
    labels: np.ndarray  # (H, W) int, values 0..K-1
    centroids: np.ndarray  # (K, 2) mean (row, col)

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def shape(self):
        return self.labels.shape


def _centroids(labels: np.ndarray, k: int) -> np.ndarray:
    rows, cols = np.indices(labels.shape)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k)
    r = np.bincount(flat, weights=rows.ravel(), minlength=k) / counts
    c = np.bincount(flat, weights=cols.ravel(), minlength=k) / counts
    return np.stack([r, c], axis=1)


def from_labels(labels: np.ndarray) -> SuperpixelMap:
    """Wrap a label image, renumbering regions by first appearance in raster order."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels.ravel(), return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    compact = order[inverse].reshape(labels.shape).astype(np.int64)
    k = len(first)
    return SuperpixelMap(compact, _centroids(compact, k))


def _grid(h: int, w: int, k: int) -> tuple[int, int]:
    rows = max(1, min(h, round(math.sqrt(k * h / w))))
    cols = max(1, min(w, round(k / rows)))
    return rows, cols


def _merge_small(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Split labels into 4-connected pieces and absorb pieces below ``min_size``.

    Pieces are visited in raster order of their first pixel; a small piece
    joins the piece left of (or above) that pixel, which was visited earlier.
    Merging adjacent pieces keeps every region connected.
    """
    comp = from_labels(connected_components(labels, background=-1, connectivity=1)).labels
    h, w = comp.shape
    n = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=n)
    _, first = np.unique(comp.ravel(), return_index=True)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    total = sizes.copy()
    for i in range(1, n):
        if sizes[i] >= min_size:
            continue
        r, c = divmod(int(first[i]), w)
        j = comp[r, c - 1] if c > 0 else comp[r - 1, c]
        root = find(j)
        parent[i] = root
        total[root] += total[i]
    roots = np.array([find(i) for i in range(n)])
    if n > 1 and total[0] < min_size:
        # the first piece has no earlier neighbour; attach it to the first adjacent piece
        merged = roots[comp]
        right = merged[:, 1:][merged[:, :-1] == 0]
        below = merged[1:, :][merged[:-1, :] == 0]
        nbrs = np.concatenate([right, below])
        nbrs = nbrs[nbrs != 0]
        if nbrs.size:
            roots[roots == 0] = nbrs.min()
    return roots[comp]


def slic_segment(img: np.ndarray, target_k: int = 1000, compactness: float = 10.0,
                 iters: int = 10) -> SuperpixelMap:
    """SLIC superpixels in CIELAB space.

    Seeds start on a regular grid (nudged to the lowest-gradient pixel of
    their 3x3 neighbourhood), pixels are assigned within a 2S x 2S window
    around each center, and disconnected or tiny fragments are merged into
    their longest-bordering neighbour at the end. Fully deterministic.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if not 1 <= target_k <= h * w:
        raise ValueError(f"target_k must lie in [1, {h * w}], got {target_k}")
    step = math.sqrt(h * w / target_k)
    if target_k == 1 or (h < step and w < step):
        return from_labels(np.zeros((h, w), dtype=np.int64))

    lab = rgb2lab(as_float_image(img)) if img.ndim == 3 else as_float_image(img)[..., None] * 100
    rows, cols = _grid(h, w, target_k)
    cy = (np.arange(rows) + 0.5) * h / rows
    cx = (np.arange(cols) + 0.5) * w / cols
    centers_rc = np.array([(y, x) for y in cy for x in cx])

    grad = np.zeros((h, w))
    grad[1:-1, :] += ((lab[2:, :] - lab[:-2, :]) ** 2).sum(-1)
    grad[:, 1:-1] += ((lab[:, 2:] - lab[:, :-2]) ** 2).sum(-1)
    seeds = []
    for y, x in centers_rc:
        r0, c0 = int(y), int(x)
        best = (np.inf, r0, c0)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, c = r0 + dr, c0 + dc
                if 0 <= r < h and 0 <= c < w and grad[r, c] < best[0]:
                    best = (grad[r, c], r, c)
        seeds.append((best[1], best[2]))
    seeds = np.array(seeds, dtype=np.float64)
    colors = lab[seeds[:, 0].astype(int), seeds[:, 1].astype(int)]
    centers = np.concatenate([colors, seeds], axis=1)  # (K, C + 2)
    n_color = lab.shape[2]

    yy, xx = np.indices((h, w), dtype=np.float64)
    spatial_w = (compactness / step) ** 2
    win = int(math.ceil(step))
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(iters):
        dist = np.full((h, w), np.inf)
        for i, center in enumerate(centers):
            y, x = center[n_color], center[n_color + 1]
            r0, r1 = max(0, int(y) - win), min(h, int(y) + win + 1)
            c0, c1 = max(0, int(x) - win), min(w, int(x) + win + 1)
            patch = lab[r0:r1, c0:c1]
            d = ((patch - center[:n_color]) ** 2).sum(-1)
            d = d + spatial_w * ((yy[r0:r1, c0:c1] - y) ** 2 + (xx[r0:r1, c0:c1] - x) ** 2)
            region = dist[r0:r1, c0:c1]
            better = d < region
            region[better] = d[better]
            labels[r0:r1, c0:c1][better] = i
        if np.isinf(dist).any():
            # pixels outside every window fall back to the spatially nearest center
            miss = np.isinf(dist)
            py, px = yy[miss], xx[miss]
            d2 = (py[:, None] - centers[:, n_color]) ** 2 + (px[:, None] - centers[:, n_color + 1]) ** 2
            labels[miss] = d2.argmin(axis=1)
        k = len(centers)
        counts = np.bincount(labels.ravel(), minlength=k)
        feats = np.concatenate([lab, yy[..., None], xx[..., None]], axis=-1).reshape(-1, n_color + 2)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels.ravel(), feats)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

    min_size = max(1, int(h * w / len(centers) / 4))
    return from_labels(_merge_small(labels, min_size))


def _round_half_down(x: float) -> int:
    return int(math.ceil(x - 0.5))


def patch_origin(sp: SuperpixelMap, region: int, size: int) -> tuple[int, int]:
    r, c = sp.centroids[region]
    return _round_half_down(r) - size // 2, _round_half_down(c) - size // 2


def extract_patch(img: np.ndarray, sp: SuperpixelMap, region: int, size: int = 128) -> np.ndarray:
    """``size x size`` crop whose center pixel ``(size // 2, size // 2)`` is the region centroid.

    Parts of the window outside the image are filled by half-sample symmetric
    reflection.
    """
    if not 0 <= region < sp.k:
        raise IndexError(f"region {region} out of range for {sp.k} superpixels")
    img = np.asarray(img)
    h, w = img.shape[:2]
    top, left = patch_origin(sp, region, size)
    pad_t, pad_l = max(0, -top), max(0, -left)
    pad_b, pad_r = max(0, top + size - h), max(0, left + size - w)
    widths = [(pad_t, pad_b), (pad_l, pad_r)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, widths, mode="symmetric") if pad_t + pad_b + pad_l + pad_r else img
    top += pad_t
    left += pad_l
    return padded[top:top + size, left:left + size].copy()


@dataclass(frozen=True)
class AttributePrediction:
    classes: np.ndarray  # (K,) ints into ATTRIBUTE_CLASSES
    scores: np.ndarray | None = None  # (K, 6) probabilities, optional

    def __post_init__(self):
        cls = np.asarray(self.classes)
        if cls.ndim != 1 or (cls.size and (cls.min() < 0 or cls.max() >= len(ATTRIBUTE_CLASSES))):
            raise ValueError("classes must be a 1-D array of indices in 0..5")
        if self.scores is not None and np.shape(self.scores) != (cls.size, len(ATTRIBUTE_CLASSES)):
            raise ValueError("scores must have shape (K, 6)")


def prediction_from_scores(scores) -> AttributePrediction:
    """Arg-max class per superpixel; ties go to the lowest index, so ``absent`` wins ties."""
    scores = np.asarray(scores, dtype=np.float64)
    return AttributePrediction(scores.argmax(axis=1), scores)


def compose_attribute_masks(sp: SuperpixelMap, pred: AttributePrediction) -> np.ndarray:
    """``(5, H, W)`` boolean masks; mask ``i`` marks superpixels predicted as attribute ``i``."""
    classes = np.asarray(pred.classes)
    if classes.shape != (sp.k,):
        raise ValueError(f"prediction covers {classes.size} superpixels, map has {sp.k}")
    pixel_class = classes[sp.labels]
    return np.stack([pixel_class == i + 1 for i in range(len(ATTRIBUTES))])


def recover_prediction(sp: SuperpixelMap, masks: np.ndarray) -> AttributePrediction:
    """Inverse of :func:`compose_attribute_masks`, read at one pixel per superpixel."""
    masks = np.asarray(masks, dtype=bool)
    flat = sp.labels.ravel()
    # first pixel of each region in raster order
    _, first = np.unique(flat, return_index=True)
    classes = np.zeros(sp.k, dtype=np.int64)
    for i in range(len(ATTRIBUTES)):
        classes[masks[i].ravel()[first]] = i + 1
    return AttributePrediction(classes)


def prune_sparse_positives(pred: AttributePrediction, min_count: int = 30) -> AttributePrediction:
    """Send every attribute with fewer than ``min_count`` superpixels back to absent.

    Counts are per image and per class. Experimental: whether the count
    should be per image, global, or score-based is not settled.
    """
    if min_count < 0:
        raise ValueError("min_count must be non-negative")
    classes = np.asarray(pred.classes).copy()
    counts = np.bincount(classes, minlength=len(ATTRIBUTE_CLASSES))
    for c in range(1, len(ATTRIBUTE_CLASSES)):
        if 0 < counts[c] < min_count:
            classes[classes == c] = 0
    return AttributePrediction(classes, pred.scores)


def prune_low_scores(pred: AttributePrediction, min_score: float) -> AttributePrediction:
    """Experimental alternative rule: drop positives whose winning score is below ``min_score``."""
    if pred.scores is None:
        raise ValueError("score-based pruning needs per-superpixel scores")
    classes = np.asarray(pred.classes).copy()
    win = np.asarray(pred.scores)[np.arange(classes.size), classes]
    classes[(classes > 0) & (win < min_score)] = 0
    return AttributePrediction(classes, pred.scores)


def attribute_mask_filename(image_id: str, attribute: str) -> str:
    return f"{image_id}_attribute_{attribute}.png"
