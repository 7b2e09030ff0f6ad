"""Pluggable predictors.

Real CNN outputs enter through ``file_import`` (a model-output CSV or a
directory of 16-bit probability PNGs). The remaining kinds are tiny
built-in models that make the pipelines runnable on a laptop.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .ensemble import read_model_outputs
from .imgops import as_float_image, read_prob_mask, resize
from .metrics import weighted_cross_entropy
from .trainsched import EarlyStopState, PlateauConfig, run_training_loop

KINDS = ("file_import", "constant", "color_threshold_segmenter", "linear_softmax")
HIST_BINS = 8
N_FEATURES = 3 * (2 + HIST_BINS)


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    params: dict = field(default_factory=dict)
    checkpoint: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}; expected one of {KINDS}")
        p = self.params
        need = {
            "file_import": ("path",),
            "constant": ("probs",),
            "color_threshold_segmenter": ("threshold", "softness"),
            "linear_softmax": ("weights", "bias", "feature_mean", "feature_std"),
        }[self.kind]
        missing = [k for k in need if k not in p]
        if missing:
            raise ValueError(f"{self.kind} predictor is missing parameter(s) {missing}")
        if self.kind == "constant":
            probs = np.asarray(p["probs"], dtype=np.float64)
            if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
                raise ValueError("constant predictor needs a probability vector")
        if self.kind == "color_threshold_segmenter" and float(p["softness"]) <= 0:
            raise ValueError("softness must be positive")
        if self.kind == "linear_softmax":
            w = np.asarray(p["weights"])
            if w.ndim != 2 or w.shape[1] != N_FEATURES or len(p["bias"]) != w.shape[0]:
                raise ValueError(f"linear_softmax weights must be (C, {N_FEATURES}) with C biases")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params, "checkpoint": self.checkpoint},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PredictorSpec":
        d = json.loads(text)
        return cls(d["kind"], d.get("params", {}), d.get("checkpoint", ""))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PredictorSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=16)
def _imported_cached(path: str, mtime_ns: int):
    return read_model_outputs(path)


def _imported(path: str):
    # keyed on modification time so a rewritten file is re-read
    return _imported_cached(path, Path(path).stat().st_mtime_ns)


def _import_row(spec: PredictorSpec, image_id: str | None) -> np.ndarray:
    if image_id is None:
        raise ValueError("file_import predictors need the image_id")
    outputs = _imported(str(spec.params["path"]))
    model_id = spec.params.get("model_id")
    if model_id is None:
        if len(outputs) != 1:
            raise ValueError(f"{spec.params['path']} holds several models; set params.model_id")
        model_id = next(iter(outputs))
    try:
        return outputs[model_id][image_id].copy()
    except KeyError:
        raise KeyError(f"no imported prediction for image {image_id!r} (model {model_id!r})") from None


def color_features(img: np.ndarray) -> np.ndarray:
    """Per-channel mean, std and an 8-bin histogram (fractions): 30 values."""
    px = as_float_image(img).reshape(-1, 3)
    feats = [px.mean(axis=0), px.std(axis=0)]
    for c in range(3):
        hist, _ = np.histogram(px[:, c], bins=HIST_BINS, range=(0.0, 1.0))
        feats.append(hist / len(px))
    return np.concatenate(feats)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _linear_probs(params: dict, feats: np.ndarray) -> np.ndarray:
    x = (feats - np.asarray(params["feature_mean"])) / np.asarray(params["feature_std"])
    return _softmax(x @ np.asarray(params["weights"]).T + np.asarray(params["bias"]))


def predict_class(spec: PredictorSpec, img: np.ndarray | None = None, image_id: str | None = None) -> np.ndarray:
    """Class probability vector for one image."""
    if spec.kind == "file_import":
        return _import_row(spec, image_id)
    if spec.kind == "constant":
        return np.asarray(spec.params["probs"], dtype=np.float64).copy()
    if spec.kind == "linear_softmax":
        return _linear_probs(spec.params, color_features(img))
    raise ValueError(f"{spec.kind} predictors do not produce class probabilities")


def luminance(img: np.ndarray) -> np.ndarray:
    return as_float_image(img) @ np.array([0.299, 0.587, 0.114])


def predict_mask(spec: PredictorSpec, img: np.ndarray | None = None, image_id: str | None = None) -> np.ndarray:
    """Lesion probability mask at the predictor's working resolution.

    ``color_threshold_segmenter`` returns ``sigmoid((t - luminance) / s)``, so
    pixels darker than ``t`` lean towards lesion. An optional ``resolution``
    parameter ``[w, h]`` resizes the input first, mimicking a network's input size.
    """
    if spec.kind == "file_import":
        if image_id is None:
            raise ValueError("file_import predictors need the image_id")
        path = Path(spec.params["path"]) / f"{image_id}.png"
        if not path.exists():
            raise FileNotFoundError(f"no imported mask for image {image_id!r} at {path}")
        return read_prob_mask(path)
    if spec.kind != "color_threshold_segmenter":
        raise ValueError(f"{spec.kind} predictors do not produce masks")
    if "resolution" in spec.params:
        w, h = spec.params["resolution"]
        img = resize(as_float_image(img), int(w), int(h), mode="bilinear")
    t = float(spec.params["threshold"])
    s = float(spec.params["softness"])
    return 1.0 / (1.0 + np.exp(-(t - luminance(img)) / s))


class LinearSoftmaxModel:
    """Multinomial logistic regression trained by momentum SGD on weighted cross-entropy."""

    def __init__(self, train_x, train_y, val_x, val_y, n_classes: int, class_weights=None,
                 momentum: float = 0.9):
        self.mean = train_x.mean(axis=0)
        self.std = np.where(train_x.std(axis=0) > 1e-8, train_x.std(axis=0), 1.0)
        self.train_x = (train_x - self.mean) / self.std
        self.train_y = np.asarray(train_y)
        self.val_x = (val_x - self.mean) / self.std
        self.val_y = np.asarray(val_y)
        self.n_classes = n_classes
        self.class_weights = np.ones(n_classes) if class_weights is None else np.asarray(class_weights)
        self.momentum = momentum
        self.W = np.zeros((n_classes, train_x.shape[1]))
        self.b = np.zeros(n_classes)
        self._vW = np.zeros_like(self.W)
        self._vb = np.zeros_like(self.b)
        self.snapshots: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._step = 0

    def probs(self, x):
        return _softmax(x @ self.W.T + self.b)

    def train_step(self, batch, lr: float) -> float:
        idx = np.asarray(batch)
        x, y = self.train_x[idx], self.train_y[idx]
        p = self.probs(x)
        w = self.class_weights[y]
        g = p.copy()
        g[np.arange(len(y)), y] -= 1.0
        g *= w[:, None] / len(y)
        self._vW = self.momentum * self._vW - lr * (g.T @ x)
        self._vb = self.momentum * self._vb - lr * g.sum(axis=0)
        self.W += self._vW
        self.b += self._vb
        self._step += 1
        return weighted_cross_entropy(p, y, self.class_weights)

    def validate(self) -> float:
        return weighted_cross_entropy(self.probs(self.val_x), self.val_y, self.class_weights)

    def checkpoint(self) -> str:
        tag = f"step-{self._step}"
        self.snapshots[tag] = (self.W.copy(), self.b.copy())
        return tag

    def spec(self, tag: str | None = None) -> PredictorSpec:
        W, b = self.snapshots[tag] if tag else (self.W, self.b)
        return PredictorSpec("linear_softmax", {
            "weights": W.tolist(), "bias": b.tolist(),
            "feature_mean": self.mean.tolist(), "feature_std": self.std.tolist(),
        }, checkpoint=tag or "")


def train_linear_softmax(train_x, train_y, val_x, val_y, n_classes: int, class_weights=None,
                         sched: PlateauConfig | None = None, patience: int = 22, max_epochs: int = 100,
                         batch_size: int = 32, seed: int = 0, log_path=None):
    """Fit the ``linear_softmax`` predictor; returns ``(spec at best epoch, TrainingLog)``.

    Features are standardized with training-set statistics. Each epoch is a
    seeded shuffle of the training rows in mini-batches.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(np.unique(train_y)) < 2:
        raise ValueError("need at least two classes to train")
    model = LinearSoftmaxModel(train_x, train_y, np.asarray(val_x, dtype=np.float64),
                               np.asarray(val_y, dtype=np.int64), n_classes, class_weights)
    if max_epochs == 0:
        return model.spec(), None
    sched = sched or PlateauConfig(start_lr=0.05, factor=0.1, patience=10, floor_lr=5e-4)
    n = len(train_x)

    def epoch_batches(epoch):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        return [order[i:i + batch_size] for i in range(0, n, batch_size)]

    log = run_training_loop(model, epoch_batches, sched, EarlyStopState(patience), max_epochs)
    if log_path is not None:
        log.write_csv(log_path)
    return model.spec(log.best_tag), log
