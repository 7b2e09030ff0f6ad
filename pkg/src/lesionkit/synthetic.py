"""Synthetic lesion corpus with known ground truth for all three tasks.

Each case is a light, lightly textured skin background with one dark
elliptical lesion. The lesion color encodes one of four diagnosis
classes; some lesions carry a lighter inner patch (a hole for naive
thresholding); up to two attribute blobs sit inside the lesion.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgops import to_uint8, write_image, write_mask
from .manifest import ImageRecord, Manifest, write_manifest
from .superpixel import (ATTRIBUTES, AttributePrediction, SuperpixelMap, attribute_mask_filename,
                         compose_attribute_masks)

DIAGNOSES = ("C0", "C1", "C2", "C3")
LESION_COLORS = np.array([
    [0.45, 0.25, 0.12],  # brown
    [0.20, 0.25, 0.45],  # blue-grey
    [0.50, 0.12, 0.30],  # red-purple
    [0.25, 0.35, 0.15],  # olive
])
SKIN = np.array([0.85, 0.70, 0.62])
ATTRIBUTE_TINTS = np.array([
    [-0.10, -0.08, -0.05],
    [0.06, 0.04, 0.06],
    [-0.12, -0.05, 0.02],
    [0.08, 0.08, 0.08],
    [-0.15, -0.12, -0.10],
])
CLASS_MIX = (0.35, 0.25, 0.20, 0.20)


@dataclass(frozen=True)
class SyntheticCase:
    image_id: str
    group_id: str
    image: np.ndarray  # (H, W, 3) uint8
    lesion: np.ndarray  # (H, W) bool
    attribute_map: np.ndarray  # (H, W) int, 0 = absent, i + 1 = ATTRIBUTES[i]
    diagnosis: int


def _ellipse(h, w, cy, cx, ry, rx, angle):
    yy, xx = np.indices((h, w), dtype=np.float64)
    y, x = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (x * c + y * s) / rx
    v = (-x * s + y * c) / ry
    return u * u + v * v <= 1.0


def _texture(rng, h, w, sigma, amp):
    t = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma)
    return amp * t / (np.abs(t).max() + 1e-12)


def _render(params: dict, size: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h = w = size
    lesion = _ellipse(h, w, *params["lesion"])
    img = np.empty((h, w, 3))
    img[:] = params["skin"]
    img += _texture(rng, h, w, 3.0, 0.03)[..., None]
    img[lesion] = params["color"]
    img[lesion] += _texture(rng, h, w, 1.5, 0.04)[lesion][:, None]
    amap = np.zeros((h, w), dtype=np.int64)
    for attr, geom in params["attributes"]:
        blob = _ellipse(h, w, *geom) & lesion
        amap[blob] = attr + 1
        img[blob] += ATTRIBUTE_TINTS[attr]
    if params["hole"] is not None:
        hole = _ellipse(h, w, *params["hole"]) & lesion
        img[hole] = params["skin"]
        amap[hole] = 0
    return to_uint8(np.clip(img, 0, 1)), lesion, amap


def _draw_params(rng, size: int, diagnosis: int) -> dict:
    c = size / 2
    ry, rx = rng.uniform(0.26, 0.36, size=2) * size
    cy, cx = c + rng.uniform(-0.08, 0.08, size=2) * size
    angle = rng.uniform(0, np.pi)
    attributes = []
    n_attr = rng.choice([0, 1, 1, 2])
    for attr in rng.choice(len(ATTRIBUTES), size=n_attr, replace=False):
        r = rng.uniform(0.18, 0.22) * size
        oy, ox = rng.uniform(-0.35, 0.35, size=2) * np.array([ry, rx])
        attributes.append((int(attr), (cy + oy, cx + ox, r, r * rng.uniform(0.9, 1.1), 0.0)))
    hole = None
    if rng.random() < 0.3:
        hr = rng.uniform(0.05, 0.08) * size
        hole = (cy + rng.uniform(-2, 2), cx + rng.uniform(-2, 2), hr, hr, 0.0)
    return {
        "lesion": (cy, cx, ry, rx, angle),
        "skin": SKIN + rng.uniform(-0.03, 0.03, size=3),
        "color": LESION_COLORS[diagnosis] + rng.uniform(-0.03, 0.03, size=3),
        "attributes": attributes,
        "hole": hole,
    }


def make_corpus(n: int = 200, size: int = 96, seed: int = 0, repeat_frac: float = 0.25) -> list[SyntheticCase]:
    """``n`` cases; about ``repeat_frac`` of them are re-shot lesions sharing a group id."""
    rng = np.random.default_rng(seed)
    cases: list[SyntheticCase] = []
    gi = 0
    while len(cases) < n:
        diagnosis = int(rng.choice(len(DIAGNOSES), p=CLASS_MIX))
        params = _draw_params(rng, size, diagnosis)
        shots = 2 if rng.random() < repeat_frac and len(cases) + 2 <= n else 1
        group = f"lesion_{gi:04d}"
        gi += 1
        for _ in range(shots):
            image, lesion, amap = _render(params, size, rng)
            cases.append(SyntheticCase(f"SYN_{len(cases):04d}", group, image, lesion, amap, diagnosis))
    return cases


def superpixel_truth(sp: SuperpixelMap, attribute_map: np.ndarray) -> AttributePrediction:
    """Majority attribute class per superpixel (ties to the lower class index)."""
    k = sp.k
    votes = np.zeros((k, len(ATTRIBUTES) + 1), dtype=np.int64)
    np.add.at(votes, (sp.labels.ravel(), attribute_map.ravel()), 1)
    return AttributePrediction(votes.argmax(axis=1))


def noisy_oracle(truth: AttributePrediction, noise: float, rng) -> AttributePrediction:
    """Flip each superpixel label with probability ``noise`` to a different, uniformly chosen class."""
    classes = np.asarray(truth.classes).copy()
    n_cls = len(ATTRIBUTES) + 1
    flip = rng.random(classes.size) < noise
    shift = rng.integers(1, n_cls, size=classes.size)
    classes[flip] = (classes[flip] + shift[flip]) % n_cls
    return AttributePrediction(classes)


def manifest_for(cases) -> Manifest:
    records = tuple(ImageRecord(c.image_id, f"images/{c.image_id}.png", c.diagnosis, c.group_id)
                    for c in cases)
    return Manifest(records, DIAGNOSES)


def write_corpus(root, cases, attribute_truth: dict | None = None) -> Path:
    """Write images, lesion masks and the manifest under ``root``.

    ``attribute_truth`` maps image id to ``(SuperpixelMap, AttributePrediction)``;
    when given, Task-2 ground-truth masks are written to ``attributes/``.
    """
    root = Path(root)
    for sub in ("images", "masks", "attributes"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for c in cases:
        write_image(root / "images" / f"{c.image_id}.png", c.image)
        write_mask(root / "masks" / f"{c.image_id}.png", c.lesion)
        if attribute_truth and c.image_id in attribute_truth:
            sp, pred = attribute_truth[c.image_id]
            for name, m in zip(ATTRIBUTES, compose_attribute_masks(sp, pred)):
                write_mask(root / "attributes" / attribute_mask_filename(c.image_id, name), m)
    write_manifest(root / "manifest.csv", manifest_for(cases))
    return root


def make_model_outputs(n: int = 300, n_models: int = 4, n_classes: int = 4, seed: int = 0,
                       skill=None) -> tuple[np.ndarray, np.ndarray]:
    """Fake per-model class probabilities for stacking experiments.

    Model ``m`` sees a logit bump of ``skill[m]`` on the true class plus
    unit Gaussian noise; returns ``(X, y)`` with ``X`` of shape
    ``(n, n_models * n_classes)`` and each C-block on the simplex.
    """
    rng = np.random.default_rng(seed)
    skill = np.linspace(0.5, 2.5, n_models) if skill is None else np.asarray(skill, dtype=np.float64)
    y = rng.integers(0, n_classes, size=n)
    blocks = []
    for m in range(n_models):
        logits = rng.normal(size=(n, n_classes))
        logits[np.arange(n), y] += skill[m]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        blocks.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(blocks, axis=1), y
