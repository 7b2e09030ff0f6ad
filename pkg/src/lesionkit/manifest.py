"""Dataset manifests, group-aware holdout/fold splits and balanced batch plans.

A manifest is a CSV with header ``image_id,path,label,group_id``. Images
sharing a ``group_id`` (same lesion, same case, aliases, near duplicates)
always land on the same side of every split.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import read_comment_header, strip_comments

MANIFEST_HEADER = ["image_id", "path", "label", "group_id"]
# ISIC 2018 diagnosis classes
DIAGNOSIS_LABELS = ("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC")


class ManifestError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    label: int | None
    group_id: str
    width: int | None = None
    height: int | None = None


@dataclass(frozen=True)
class Manifest:
    records: tuple[ImageRecord, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise ManifestError(f"duplicate image_id {r.image_id!r}")
            seen.add(r.image_id)
            if not r.group_id:
                raise ManifestError(f"empty group_id for {r.image_id!r}")
            if r.label is not None and not 0 <= r.label < len(self.labels):
                raise ManifestError(f"label index {r.label} out of range for {r.image_id!r}")

    def __len__(self):
        return len(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}

    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]


def load_manifest(path, labels: Sequence[str] = DIAGNOSIS_LABELS) -> Manifest:
    """Read a manifest CSV; label strings are mapped to indices in ``labels``."""
    labels = tuple(labels)
    index = {name: i for i, name in enumerate(labels)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(strip_comments(fh))
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ManifestError(f"expected header {','.join(MANIFEST_HEADER)}, got {header}")
        records = []
        seen = set()
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"line {lineno}: expected 4 fields, got {len(row)}")
            image_id, rel, label, group = (x.strip() for x in row)
            if image_id in seen:
                raise ManifestError(f"duplicate image_id {image_id!r} (line {lineno})")
            seen.add(image_id)
            if label == "":
                label_idx = None
            elif label in index:
                label_idx = index[label]
            else:
                raise ManifestError(
                    f"unknown label {label!r} for {image_id!r}; valid labels: {', '.join(labels)}")
            records.append(ImageRecord(image_id, rel, label_idx, group))
    return Manifest(tuple(records), labels)


def write_manifest(path, m: Manifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in m.records:
            w.writerow([r.image_id, r.path, "" if r.label is None else m.labels[r.label], r.group_id])


# Splits -------------------------------------------------------------------

@dataclass(frozen=True)
class Splits:
    """Holdout set plus ``n_folds`` independent random train/val divisions of the pool."""

    holdout: frozenset
    pool: frozenset
    val_folds: tuple[frozenset, ...]
    seed: int
    achieved_holdout_frac: float
    achieved_val_fracs: tuple[float, ...] = field(default=())

    @property
    def n_folds(self) -> int:
        return len(self.val_folds)

    def roles(self) -> list[str]:
        out = ["holdout"]
        for k in range(1, self.n_folds + 1):
            out += [f"train_{k}", f"val_{k}"]
        return out

    def ids(self, role: str) -> frozenset:
        if role == "holdout":
            return self.holdout
        if role == "pool":
            return self.pool
        kind, _, k = role.partition("_")
        if kind in ("train", "val") and k.isdigit() and 1 <= int(k) <= self.n_folds:
            val = self.val_folds[int(k) - 1]
            return val if kind == "val" else self.pool - val
        raise SplitError(f"unknown split role {role!r}")

    def rows(self, order: Sequence[str]) -> list[tuple[str, str]]:
        """``(image_id, role)`` rows; pool images get one row per fold."""
        rows = []
        for image_id in order:
            if image_id in self.holdout:
                rows.append((image_id, "holdout"))
                continue
            for k, val in enumerate(self.val_folds, 1):
                rows.append((image_id, f"{'val' if image_id in val else 'train'}_{k}"))
        return rows


def _group_index(m: Manifest) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = defaultdict(list)
    for r in m.records:
        groups[r.group_id].append(r.image_id)
    return groups


def _greedy_fill(groups: list[list[str]], order: np.ndarray, target: int) -> set[str]:
    chosen: set[str] = set()
    for g in order:
        if len(chosen) >= target:
            break
        chosen.update(groups[g])
    return chosen


def make_splits(m: Manifest, seed: int = 0, holdout_frac: float = 0.10, n_folds: int = 5,
                val_frac: float = 0.10) -> Splits:
    """Group-atomic holdout and ``n_folds`` random validation draws.

    Groups are shuffled and added whole until the target image count is
    reached, so a split may overshoot its target by less than the size of
    the last group added. Each fold is drawn independently from the pool
    (these are not cross-validation partitions).
    """
    if not 0 < holdout_frac < 1 or not 0 < val_frac < 1:
        raise SplitError("holdout_frac and val_frac must lie in (0, 1)")
    if n_folds < 1:
        raise SplitError("n_folds must be at least 1")
    groups_by_id = _group_index(m)
    names = sorted(groups_by_id)
    groups = [groups_by_id[g] for g in names]
    sizes = np.array([len(g) for g in groups])
    n = int(sizes.sum())
    if n == 0:
        raise SplitError("cannot split an empty manifest")

    target = int(round(holdout_frac * n))
    biggest = int(sizes.argmax())
    if sizes[biggest] > target:
        raise SplitError(
            f"group {names[biggest]!r} has {sizes[biggest]} images, more than the holdout "
            f"target of {target}; use a larger holdout_frac")
    rng = np.random.default_rng([seed, 0])
    holdout = _greedy_fill(groups, rng.permutation(len(groups)), target)

    pool_groups = [i for i, g in enumerate(groups) if g[0] not in holdout]
    pool = frozenset(x for i in pool_groups for x in groups[i])
    val_target = max(1, int(round(val_frac * len(pool))))
    folds = []
    for k in range(1, n_folds + 1):
        frng = np.random.default_rng([seed, k])
        perm = np.asarray(pool_groups)[frng.permutation(len(pool_groups))]
        val = frozenset(_greedy_fill(groups, perm, val_target))
        if val == pool:
            raise SplitError(f"fold {k}: validation draw swallowed the whole pool; "
                             "use a smaller val_frac or finer groups")
        folds.append(val)
    return Splits(
        holdout=frozenset(holdout),
        pool=pool,
        val_folds=tuple(folds),
        seed=seed,
        achieved_holdout_frac=len(holdout) / n,
        achieved_val_fracs=tuple(len(f) / len(pool) if pool else 0.0 for f in folds),
    )


def format_splits(s: Splits, order: Sequence[str]) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={s.seed}\n")
    buf.write(f"# achieved_holdout_frac={s.achieved_holdout_frac!r}\n")
    for k, f in enumerate(s.achieved_val_fracs, 1):
        buf.write(f"# achieved_val_frac_{k}={f!r}\n")
    buf.write(f"# n_folds={s.n_folds}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "role"])
    w.writerows(s.rows(order))
    return buf.getvalue()


def write_splits(path, s: Splits, order: Sequence[str], extra_header: dict | None = None) -> None:
    text = format_splits(s, order)
    if extra_header:
        text = "".join(f"# {k}={v}\n" for k, v in extra_header.items()) + text
    Path(path).write_text(text, encoding="utf-8")


def read_splits(path) -> Splits:
    header = read_comment_header(path)
    holdout, pool = set(), set()
    val: dict[int, set] = defaultdict(set)
    n_folds = int(header.get("n_folds", 0))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(strip_comments(fh))
        if next(reader, None) != ["image_id", "role"]:
            raise SplitError(f"{path}: expected header image_id,role")
        for row in reader:
            if not row:
                continue
            image_id, role = row
            if role == "holdout":
                holdout.add(image_id)
                continue
            kind, _, k = role.partition("_")
            if kind not in ("train", "val") or not k.isdigit():
                raise SplitError(f"{path}: unknown role {role!r}")
            pool.add(image_id)
            n_folds = max(n_folds, int(k))
            if kind == "val":
                val[int(k)].add(image_id)
    if holdout & pool:
        raise SplitError(f"{path}: images listed in both holdout and pool")
    return Splits(
        holdout=frozenset(holdout),
        pool=frozenset(pool),
        val_folds=tuple(frozenset(val[k]) for k in range(1, n_folds + 1)),
        seed=int(header.get("seed", 0)),
        achieved_holdout_frac=float(header.get("achieved_holdout_frac", "nan")),
        achieved_val_fracs=tuple(
            float(header.get(f"achieved_val_frac_{k}", "nan")) for k in range(1, n_folds + 1)),
    )


# Class statistics and batches ---------------------------------------------

def _records_in(m: Manifest, ids) -> list[ImageRecord]:
    if ids is None:
        return list(m.records)
    return [r for r in m.records if r.image_id in ids]


def class_stats(m: Manifest, ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Counts and frequencies per class over the labeled images in ``ids``.

    ``ids`` is any container of image ids (for example ``splits.ids("train_1")``);
    ``None`` means the whole manifest.
    """
    counts = np.zeros(m.n_classes, dtype=np.int64)
    for r in _records_in(m, ids):
        if r.label is not None:
            counts[r.label] += 1
    total = counts.sum()
    freqs = counts / total if total else np.zeros(m.n_classes)
    return counts, freqs


@dataclass(frozen=True)
class BatchPlan:
    batches: tuple[tuple[tuple[str, int], ...], ...]
    batch_size: int
    batches_per_epoch: int

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)


def balanced_batches(m: Manifest, ids=None, batch_size: int = 16, batches_per_epoch: int = 750,
                     seed: int = 0) -> BatchPlan:
    """Class-balanced batches: classes are visited round-robin, examples drawn with replacement.

    The class cursor carries over between batches, so when ``batch_size`` is
    not a multiple of the class count the extra slots rotate through the classes.
    """
    by_class: dict[int, list[str]] = defaultdict(list)
    for r in _records_in(m, ids):
        if r.label is not None:
            by_class[r.label].append(r.image_id)
    missing = [m.labels[c] for c in range(m.n_classes) if not by_class.get(c)]
    if missing:
        raise ManifestError(f"no labeled examples for class(es) {', '.join(missing)}")
    n_classes = m.n_classes
    members = [np.array(by_class[c]) for c in range(n_classes)]
    rng = np.random.default_rng(seed)
    batches = []
    cursor = 0
    for _ in range(batches_per_epoch):
        classes = [(cursor + j) % n_classes for j in range(batch_size)]
        cursor = (cursor + batch_size) % n_classes
        batch = []
        for c in classes:
            pick = members[c][rng.integers(len(members[c]))]
            batch.append((str(pick), c))
        batches.append(tuple(batch))
    return BatchPlan(tuple(batches), batch_size, batches_per_epoch)


def batch_class_counts(batch, n_classes: int) -> np.ndarray:
    return np.bincount([c for _, c in batch], minlength=n_classes)
