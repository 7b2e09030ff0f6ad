"""Brute-force reference implementations, written independently of the package.

Plain Python loops on purpose: they share no code path with the vectorized
implementations they check.
"""
import math
from collections import deque


def flood_fill_holes(mask):
    """BFS from every border background pixel (4-connectivity); unreached background becomes 1."""
    h, w = len(mask), len(mask[0])
    reached = [[False] * w for _ in range(h)]
    q = deque()
    for r in range(h):
        for c in range(w):
            if (r in (0, h - 1) or c in (0, w - 1)) and not mask[r][c]:
                reached[r][c] = True
                q.append((r, c))
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and not mask[rr][cc] and not reached[rr][cc]:
                reached[rr][cc] = True
                q.append((rr, cc))
    return [[bool(mask[r][c]) or not reached[r][c] for c in range(w)] for r in range(h)]


def jaccard(a, b):
    inter = union = 0
    for x, y in zip(a, b):
        inter += bool(x) and bool(y)
        union += bool(x) or bool(y)
    return 1.0 if union == 0 else inter / union


def bce_soft_jaccard(p, g, weight, eps):
    n = len(p)
    bce = 0.0
    inter = sp = sg = 0.0
    for pi, gi in zip(p, g):
        pi = min(max(pi, eps), 1 - eps)
        bce += -(gi * math.log(pi) + (1 - gi) * math.log(1 - pi))
        inter += pi * gi
        sp += pi
        sg += gi
    soft = inter / (sp + sg - inter + eps)
    return bce / n - weight * math.log(soft + eps)


def weighted_ce(probs, labels, weights, eps):
    total = 0.0
    for row, y in zip(probs, labels):
        total += weights[y] * -math.log(min(max(row[y], eps), 1.0))
    return total / len(labels)


def balanced_accuracy(y_true, y_pred, n_classes):
    recalls = []
    for c in range(n_classes):
        idx = [i for i, y in enumerate(y_true) if y == c]
        recalls.append(sum(1 for i in idx if y_pred[i] == c) / len(idx))
    return sum(recalls) / n_classes


def pooled_attribute_score(pred, gt):
    """``pred``/``gt``: list over images of list over 5 attributes of flat 0/1 lists."""
    scores = []
    for k in range(5):
        inter = union = 0
        for p_img, g_img in zip(pred, gt):
            for x, y in zip(p_img[k], g_img[k]):
                inter += x and y
                union += x or y
        scores.append(1.0 if union == 0 else inter / union)
    return sum(scores) / 5


def bilinear_half_pixel(row, n_out):
    """1-D bilinear resampling with half-pixel centers and edge clamping."""
    n_in = len(row)
    out = []
    for j in range(n_out):
        x = (j + 0.5) * n_in / n_out - 0.5
        x = min(max(x, 0.0), n_in - 1.0)
        i0 = int(math.floor(x))
        i1 = min(i0 + 1, n_in - 1)
        f = x - i0
        out.append(row[i0] * (1 - f) + row[i1] * f)
    return out


def mean_rows(rows):
    n = len(rows)
    acc = [0.0] * len(rows[0])
    for r in rows:
        for i, v in enumerate(r):
            acc[i] += v
    return [a / n for a in acc]


def tally(labels):
    counts = {}
    for y in labels:
        if y is None:
            continue
        counts[y] = counts.get(y, 0) + 1
    return counts
