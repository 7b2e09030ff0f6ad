"""Mean ensembling, holdout model selection and a boosted-tree stacker.

The stacker is a small exact-greedy gradient boosting machine for softmax
cross-entropy. Its input rows are the concatenated class probabilities of
``M`` base models (``M * C`` features per image).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import strip_comments

STACKER_FORMAT_VERSION = 1


def stable_mean(stacked: np.ndarray) -> np.ndarray:
    """Mean over axis 0 that ignores input order and returns agreeing values unchanged."""
    s = np.sort(np.asarray(stacked, dtype=np.float64), axis=0)
    return np.where(s[0] == s[-1], s[0], s.mean(axis=0))


def mean_ensemble_probs(rows) -> np.ndarray:
    """Per-class mean of per-model probability vectors (or ``(N, C)`` matrices)."""
    arrs = [np.asarray(r, dtype=np.float64) for r in rows]
    if not arrs:
        raise ValueError("need at least one model output")
    for a in arrs[1:]:
        if a.shape != arrs[0].shape:
            raise ValueError(f"length mismatch: {a.shape} vs {arrs[0].shape}")
    return stable_mean(np.stack(arrs))


def mean_ensemble_masks(masks) -> np.ndarray:
    arrs = [np.asarray(m, dtype=np.float64) for m in masks]
    if not arrs:
        raise ValueError("need at least one mask")
    for a in arrs[1:]:
        if a.shape != arrs[0].shape:
            raise ValueError(f"mask shape mismatch: {a.shape} vs {arrs[0].shape}")
    return stable_mean(np.stack(arrs))


def select_top_models(holdout_scores: dict[str, float], k: int) -> list[str]:
    """Ids of the ``k`` best-scoring models; equal scores are ordered by id."""
    if k > len(holdout_scores):
        raise ValueError(f"asked for {k} models, only {len(holdout_scores)} scored")
    ranked = sorted(holdout_scores, key=lambda mid: (-holdout_scores[mid], mid))
    return ranked[:k]


# Model output exchange ------------------------------------------------------

def write_model_outputs(path, rows, header: dict | None = None) -> None:
    """Write ``(image_id, model_id, probs)`` rows as ``image_id,model_id,p_0,...``."""
    rows = list(rows)
    n_classes = len(rows[0][2]) if rows else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "model_id"] + [f"p_{c}" for c in range(n_classes)])
        for image_id, model_id, probs in rows:
            w.writerow([image_id, model_id] + [repr(float(p)) for p in probs])


def read_model_outputs(path) -> dict[str, dict[str, np.ndarray]]:
    """``{model_id: {image_id: probs}}`` from a model-output CSV."""
    out: dict[str, dict[str, np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(strip_comments(fh))
        header = next(reader, None)
        if not header or header[:2] != ["image_id", "model_id"]:
            raise ValueError(f"{path}: expected header image_id,model_id,p_0,...")
        n_classes = len(header) - 2
        for row in reader:
            if not row:
                continue
            if len(row) != n_classes + 2:
                raise ValueError(f"{path}: row for {row[0]!r} has {len(row) - 2} probabilities, "
                                 f"expected {n_classes}")
            out.setdefault(row[1], {})[row[0]] = np.array([float(x) for x in row[2:]])
    return out


def feature_matrix(outputs: dict[str, dict[str, np.ndarray]], image_ids, model_ids=None) -> np.ndarray:
    """Stack per-model probabilities into ``(N, M * C)`` rows, models in ``model_ids`` order."""
    model_ids = sorted(outputs) if model_ids is None else list(model_ids)
    rows = []
    for image_id in image_ids:
        try:
            rows.append(np.concatenate([outputs[m][image_id] for m in model_ids]))
        except KeyError as exc:
            raise KeyError(f"no prediction for image {image_id!r} from model {exc}") from None
    return np.array(rows)


# Stacker --------------------------------------------------------------------

LEAF_CLIP = 4.0


@dataclass(frozen=True)
class Tree:
    """Flat binary tree. Internal node ``i`` has ``feature[i] >= 0``; leaves have -1."""

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        feature = np.array(self.feature)
        threshold = np.array(self.threshold)
        left, right = np.array(self.left), np.array(self.right)
        active = feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            f = feature[node[idx]]
            go_left = X[idx, f] <= threshold[node[idx]]
            node[idx] = np.where(go_left, left[node[idx]], right[node[idx]])
            active = feature[node] >= 0
        return np.array(self.value)[node]

    def to_dict(self) -> dict:
        return {"feature": list(self.feature), "threshold": list(self.threshold),
                "left": list(self.left), "right": list(self.right), "value": list(self.value)}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(tuple(int(x) for x in d["feature"]), tuple(float(x) for x in d["threshold"]),
                   tuple(int(x) for x in d["left"]), tuple(int(x) for x in d["right"]),
                   tuple(float(x) for x in d["value"]))


@dataclass(frozen=True)
class StackerModel:
    n_classes: int
    n_features: int
    shrinkage: float
    priors: tuple[float, ...]
    rounds: tuple[tuple[Tree, ...], ...]
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "format_version": STACKER_FORMAT_VERSION,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "shrinkage": self.shrinkage,
            "priors": list(self.priors),
            "seed": self.seed,
            "rounds": [[t.to_dict() for t in trees] for trees in self.rounds],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StackerModel":
        d = json.loads(text)
        if d.get("format_version") != STACKER_FORMAT_VERSION:
            raise ValueError(f"unsupported stacker format {d.get('format_version')!r}")
        return cls(d["n_classes"], d["n_features"], d["shrinkage"], tuple(d["priors"]),
                   tuple(tuple(Tree.from_dict(t) for t in trees) for trees in d["rounds"]),
                   d.get("seed", 0))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StackerModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _best_split(X, residual, rows):
    """Best variance-reduction split of ``rows``; ``None`` if nothing improves."""
    r = residual[rows]
    n = len(rows)
    total, best = r.sum(), None
    base = total * total / n
    best_gain = 1e-12
    for f in range(X.shape[1]):
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs, rs = x[order], r[order]
        csum = np.cumsum(rs)[:-1]
        nl = np.arange(1, n)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        gain = csum**2 / nl + (total - csum) ** 2 / (n - nl) - base
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = gain[i]
            best = (f, (xs[i] + xs[i + 1]) / 2, rows[order[: i + 1]], rows[order[i + 1:]])
    return best


def _fit_tree(X, residual, hess, depth: int) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(rows):
        h = hess[rows].sum()
        v = residual[rows].sum() / h if h > 1e-12 else 0.0
        return float(np.clip(v, -LEAF_CLIP, LEAF_CLIP))

    def grow(rows, d):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        split = _best_split(X, residual, rows) if d < depth and len(rows) > 1 else None
        if split is None:
            value[node] = leaf_value(rows)
            return node
        f, thr, lrows, rrows = split
        feature[node] = f
        threshold[node] = float(thr)
        left[node] = grow(np.sort(lrows), d + 1)
        right[node] = grow(np.sort(rrows), d + 1)
        return node

    grow(np.arange(len(X)), 0)
    return Tree(tuple(feature), tuple(threshold), tuple(left), tuple(right), tuple(value))


def fit_stacker(X, y, n_classes: int | None = None, rounds: int = 100, depth: int = 3,
                shrinkage: float = 0.1, seed: int = 0) -> StackerModel:
    """Gradient-boosted trees on softmax cross-entropy.

    Each round fits one regression tree per class to the residual
    ``onehot(y) - p`` with exact greedy splits; leaves hold the Newton step
    ``sum(residual) / sum(p * (1 - p))`` clipped to +-4. Scores start at the
    class log-priors. No subsampling, so ``seed`` is recorded but unused.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (N, F) with one label per row")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(y, minlength=n_classes)
    if np.count_nonzero(counts) < 2:
        raise ValueError("stacker needs at least two classes in the training set")
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    priors = counts / counts.sum()
    onehot = np.eye(n_classes)[y]
    with np.errstate(divide="ignore"):
        base = np.log(priors)
    base = np.where(np.isfinite(base), base, -30.0)
    scores = np.tile(base, (len(X), 1))
    all_rounds = []
    for _ in range(rounds):
        p = _softmax(scores)
        residual = onehot - p
        hess = p * (1 - p)
        trees = tuple(_fit_tree(X, residual[:, c], hess[:, c], depth) for c in range(n_classes))
        for c, tree in enumerate(trees):
            scores[:, c] += shrinkage * tree.predict(X)
        all_rounds.append(trees)
    return StackerModel(n_classes, X.shape[1], float(shrinkage), tuple(float(p) for p in priors),
                        tuple(all_rounds), seed)


def stacker_scores(m: StackerModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != m.n_features:
        raise ValueError(f"expected {m.n_features} features, got {X.shape[1]}")
    priors = np.asarray(m.priors)
    with np.errstate(divide="ignore"):
        base = np.log(priors)
    scores = np.tile(np.where(np.isfinite(base), base, -30.0), (len(X), 1))
    for trees in m.rounds:
        for c, tree in enumerate(trees):
            scores[:, c] += m.shrinkage * tree.predict(X)
    return scores


def predict_stacker(m: StackerModel, X) -> np.ndarray:
    """Class probabilities for one feature row (1-D input) or a batch of rows."""
    arr = np.asarray(X, dtype=np.float64)
    single = arr.ndim == 1
    scores = stacker_scores(m, arr)
    if not m.rounds:
        # an empty booster predicts the training priors exactly
        probs = np.tile(np.asarray(m.priors), (len(scores), 1))
    else:
        probs = _softmax(scores)
    return probs[0] if single else probs


def stacker_loss(m: StackerModel, X, y) -> float:
    p = predict_stacker(m, np.atleast_2d(X))
    y = np.asarray(y, dtype=np.int64)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, 1))))


def truncate_stacker(m: StackerModel, n_rounds: int) -> StackerModel:
    """The same booster keeping only its first ``n_rounds`` rounds."""
    return StackerModel(m.n_classes, m.n_features, m.shrinkage, m.priors, m.rounds[:n_rounds], m.seed)
