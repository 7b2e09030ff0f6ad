"""Command-line entry point: ``lesionkit <subcommand> [flags]``.

Every subcommand prints one JSON object per line on stdout and embeds the
seed and a config hash in the artifacts it writes. Exit status is 0 on
success and 2 on invalid input.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import TTA_MODES, AugmentSpec, load_spec, make_tta_replicas, sample_augmentation, apply_augmentation
from .backend import PredictorSpec, color_features, predict_mask, train_linear_softmax
from .config import config_hash, parse_bool, read_kv
from .ensemble import (feature_matrix, fit_stacker, mean_ensemble_probs, predict_stacker,
                       read_model_outputs, select_top_models, write_model_outputs)
from .imgops import (postprocess_segmentation, read_image, read_mask, read_prob_mask, write_image, write_mask,
                     write_prob_mask)
from .manifest import (DIAGNOSIS_LABELS, ManifestError, SplitError, balanced_batches, class_stats,
                       load_manifest, make_splits, read_splits, write_splits)
from .metrics import DEFAULT_TAU, attribute_score, balanced_accuracy, class_weights, confusion_matrix, threshold_jaccard
from .pipelines import DEFAULT_REPLICAS, attribute_image, classify_image, segment_image
from .superpixel import ATTRIBUTES, attribute_mask_filename, slic_segment
from .synthetic import make_corpus, superpixel_truth, write_corpus
from .trainsched import PlateauConfig, TrainingDiverged

# flags whose values are lists; config files give them comma-separated
_LIST_FLAGS = {"pred_dirs", "predictions", "predictor", "model_ids"}
# where results go does not change what is computed
_OUTPUT_FLAGS = {"out", "masks_out", "model_out", "log"}


class CLIError(ValueError):
    pass


def _emit(report: dict) -> None:
    print(json.dumps(report, sort_keys=True), flush=True)


def _labels(args) -> tuple[str, ...]:
    return tuple(x.strip() for x in args.labels.split(",")) if args.labels else DIAGNOSIS_LABELS


def _provenance(args) -> dict:
    return {"seed": args.seed, "config_hash": args.config_hash}


def _write_sidecar(out_dir: Path, args, extra: dict | None = None) -> None:
    info = {"command": args.command, **_provenance(args), **(extra or {})}
    (out_dir / "run.json").write_text(json.dumps(info, sort_keys=True) + "\n", encoding="utf-8")


def _manifest_root(args) -> Path:
    return Path(args.root) if getattr(args, "root", None) else Path(args.manifest).parent


def _selected_records(args, manifest):
    if getattr(args, "splits", None) and getattr(args, "role", None):
        ids = read_splits(args.splits).ids(args.role)
        return [r for r in manifest.records if r.image_id in ids]
    return list(manifest.records)


def _augment_spec(args) -> AugmentSpec:
    return load_spec(args.augment_spec) if getattr(args, "augment_spec", None) else AugmentSpec()


# subcommands ------------------------------------------------------------------

def cmd_split(args):
    m = load_manifest(args.manifest, _labels(args))
    s = make_splits(m, args.seed, args.holdout_frac, args.folds, args.val_frac)
    write_splits(args.out, s, m.ids(), extra_header={"config_hash": args.config_hash})
    _emit({"command": "split", "n": len(m), "holdout": len(s.holdout), "pool": len(s.pool),
           "achieved_holdout_frac": s.achieved_holdout_frac,
           "achieved_val_fracs": list(s.achieved_val_fracs), "out": str(args.out), **_provenance(args)})


def cmd_stats(args):
    m = load_manifest(args.manifest, _labels(args))
    ids = read_splits(args.splits).ids(args.role) if args.splits else None
    counts, freqs = class_stats(m, ids)
    report = {"command": "stats", "role": args.role if args.splits else "all", "labels": list(m.labels),
              "counts": counts.tolist(), "freqs": freqs.tolist(), **_provenance(args)}
    if np.all(counts > 0):
        report["class_weights"] = class_weights(counts).tolist()
    if args.batches:
        plan = balanced_batches(m, ids, args.batch_size, args.batches, args.seed)
        report["first_batch_counts"] = np.bincount([c for _, c in plan.batches[0]],
                                                   minlength=m.n_classes).tolist()
    _emit(report)


def cmd_augment_preview(args):
    img = read_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = _augment_spec(args)
    size = tuple(args.size) if args.size else None
    params = []
    for i in range(args.n):
        a = sample_augmentation(spec, args.seed + i)
        write_image(out / f"aug_{i:03d}.png", apply_augmentation(img, a, size))
        params.append(a.params())
    (out / "params.jsonl").write_text("".join(json.dumps(p, sort_keys=True) + "\n" for p in params))
    _write_sidecar(out, args)
    _emit({"command": "augment-preview", "n": args.n, "out": str(out), **_provenance(args)})


def cmd_tta(args):
    img = read_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.replicas or DEFAULT_REPLICAS[args.mode]
    size = tuple(args.size) if args.size else None
    reps = make_tta_replicas(img, n, args.mode, args.seed, _augment_spec(args), size)
    for i, r in enumerate(reps):
        write_image(out / f"replica_{i:03d}.png", r)
    _write_sidecar(out, args, {"mode": args.mode, "replicas": n})
    _emit({"command": "tta", "mode": args.mode, "replicas": n, "out": str(out), **_provenance(args)})


def _features(records, root: Path, n_aug: int, seed: int, spec: AugmentSpec):
    xs, ys = [], []
    for i, r in enumerate(records):
        img = read_image(root / r.path)
        xs.append(color_features(img))
        ys.append(r.label)
        for a in range(n_aug):
            aug = apply_augmentation(img, sample_augmentation(spec, seed + 1000 * i + a))
            xs.append(color_features(aug))
            ys.append(r.label)
    return np.array(xs), np.array(ys)


def cmd_train_baseline(args):
    m = load_manifest(args.manifest, _labels(args))
    s = read_splits(args.splits)
    root = _manifest_root(args)
    by_role = {role: [r for r in m.records if r.image_id in s.ids(role) and r.label is not None]
               for role in (f"train_{args.fold}", f"val_{args.fold}")}
    spec = _augment_spec(args)
    tx, ty = _features(by_role[f"train_{args.fold}"], root, args.aug_replicas, args.seed, spec)
    vx, vy = _features(by_role[f"val_{args.fold}"], root, 0, args.seed, spec)
    counts = np.bincount(ty, minlength=m.n_classes)
    # classes missing from this fold never enter the loss; their weight is moot
    weights = np.ones(m.n_classes)
    weights[counts > 0] = class_weights(counts[counts > 0])
    sched = PlateauConfig(start_lr=args.lr, factor=0.1, patience=args.plateau_patience, floor_lr=args.floor_lr)
    predictor, log = train_linear_softmax(tx, ty, vx, vy, m.n_classes, weights, sched, args.patience,
                                          args.max_epochs, seed=args.seed, log_path=args.log)
    predictor.save(args.out)
    _emit({"command": "train-baseline", "fold": args.fold, "epochs": len(log.epochs) if log else 0,
           "best_epoch": log.best_epoch if log else 0, "checkpoint": predictor.checkpoint,
           "out": str(args.out), **_provenance(args)})


def _load_predictors(paths) -> list[PredictorSpec]:
    return [PredictorSpec.load(p) for p in paths]


def cmd_predict(args):
    m = load_manifest(args.manifest, _labels(args))
    root = _manifest_root(args)
    predictors = _load_predictors(args.predictor)
    records = _selected_records(args, m)
    if args.masks_out:
        out = Path(args.masks_out)
        out.mkdir(parents=True, exist_ok=True)
        for r in records:
            write_prob_mask(out / f"{r.image_id}.png",
                            np.mean([predict_mask(p, read_image(root / r.path), r.image_id) for p in predictors], axis=0))
        _write_sidecar(out, args)
        _emit({"command": "predict", "n": len(records), "masks_out": str(out), **_provenance(args)})
        return
    n = args.replicas if args.replicas is not None else 1
    rows = []
    for r in records:
        img = read_image(root / r.path)
        probs = classify_image(img, r.image_id, predictors, n, args.mode, args.seed, _augment_spec(args))
        rows.append((r.image_id, args.model_id, probs))
    write_model_outputs(args.out, rows, {"seed": args.seed, "config_hash": args.config_hash,
                                         "replicas": n, "mode": args.mode})
    _emit({"command": "predict", "n": len(rows), "replicas": n, "out": str(args.out), **_provenance(args)})


def _merged_outputs(paths) -> dict:
    merged: dict = {}
    for p in paths:
        for model_id, rows in read_model_outputs(p).items():
            if model_id in merged:
                raise CLIError(f"model id {model_id!r} appears in more than one input")
            merged[model_id] = rows
    return merged


def cmd_ensemble(args):
    outputs = _merged_outputs(args.predictions)
    model_ids = sorted(outputs)
    if args.scores:
        scores = json.loads(Path(args.scores).read_text())
        model_ids = select_top_models({k: float(v) for k, v in scores.items() if k in outputs},
                                      args.top_k or len(outputs))
    image_ids = sorted(set.intersection(*(set(outputs[mid]) for mid in model_ids)))
    rows = [(i, args.model_id, mean_ensemble_probs([outputs[mid][i] for mid in model_ids])) for i in image_ids]
    write_model_outputs(args.out, rows, {"seed": args.seed, "config_hash": args.config_hash,
                                         "members": "|".join(model_ids)})
    _emit({"command": "ensemble", "members": model_ids, "n": len(rows), "out": str(args.out),
           **_provenance(args)})


def cmd_stack(args):
    m = load_manifest(args.manifest, _labels(args))
    labels = {r.image_id: r.label for r in m.records}
    train = _merged_outputs(args.train)
    model_ids = sorted(train)
    train_ids = sorted(i for i in set.intersection(*(set(v) for v in train.values()))
                       if labels.get(i) is not None)
    X = feature_matrix(train, train_ids, model_ids)
    y = np.array([labels[i] for i in train_ids])
    model = fit_stacker(X, y, m.n_classes, args.rounds, args.depth, args.shrinkage, args.seed)
    if args.model_out:
        model.save(args.model_out)
    report = {"command": "stack", "models": model_ids, "n_train": len(train_ids), "rounds": args.rounds,
              **_provenance(args)}
    if args.apply:
        apply = _merged_outputs(args.apply)
        ids = sorted(set.intersection(*(set(apply[mid]) for mid in model_ids)))
        probs = predict_stacker(model, feature_matrix(apply, ids, model_ids))
        write_model_outputs(args.out, [(i, args.model_id, p) for i, p in zip(ids, probs)],
                            {"seed": args.seed, "config_hash": args.config_hash})
        report.update(n_applied=len(ids), out=str(args.out))
    _emit(report)


def cmd_postprocess_seg(args):
    dirs = [Path(d) for d in args.pred_dirs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = sorted(p.stem for p in dirs[0].glob("*.png"))
    for image_id in ids:
        if args.images:
            h, w = read_image(Path(args.images) / f"{image_id}.png").shape[:2]
        elif args.size:
            w, h = args.size
        else:
            raise CLIError("postprocess-seg needs --images or --size for the output resolution")
        masks = []
        for d in dirs:
            path = d / f"{image_id}.png"
            if not path.exists():
                raise FileNotFoundError(f"missing prediction {path}")
            masks.append(read_prob_mask(path))
        write_mask(out / f"{image_id}.png", postprocess_segmentation(masks, (w, h), args.threshold, args.order))
    _write_sidecar(out, args, {"threshold": args.threshold, "order": args.order})
    _emit({"command": "postprocess-seg", "n": len(ids), "out": str(out), **_provenance(args)})


def cmd_segment(args):
    """Predict and post-process in one go (predict --masks-out + postprocess-seg)."""
    m = load_manifest(args.manifest, _labels(args))
    root = _manifest_root(args)
    predictors = _load_predictors(args.predictor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _selected_records(args, m)
    for r in records:
        write_mask(out / f"{r.image_id}.png",
                   segment_image(read_image(root / r.path), r.image_id, predictors, args.threshold, args.order))
    _write_sidecar(out, args)
    _emit({"command": "segment", "n": len(records), "out": str(out), **_provenance(args)})


def cmd_compose_attr(args):
    m = load_manifest(args.manifest, _labels(args))
    root = _manifest_root(args)
    predictor = PredictorSpec.load(args.predictor[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _selected_records(args, m)
    n_sp = []
    for r in records:
        sp, pred, masks = attribute_image(
            read_image(root / r.path), r.image_id, predictor, args.target_k, args.compactness, args.iters,
            args.patch_size, args.replicas or DEFAULT_REPLICAS["flips_color_only"],
            None if args.no_prune else args.min_count, args.prune_mode, args.min_score, args.seed,
            _augment_spec(args))
        n_sp.append(sp.k)
        for name, mask in zip(ATTRIBUTES, masks):
            write_mask(out / attribute_mask_filename(r.image_id, name), mask)
    _write_sidecar(out, args, {"min_count": None if args.no_prune else args.min_count,
                               "target_k": args.target_k})
    _emit({"command": "compose-attr", "n": len(records), "mean_superpixels": float(np.mean(n_sp)) if n_sp else 0,
           "out": str(out), **_provenance(args)})


def cmd_eval_seg(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    ids = sorted(p.stem for p in gt_dir.glob("*.png"))
    if not ids:
        raise CLIError(f"no ground-truth masks in {gt_dir}")
    scores = []
    for image_id in ids:
        path = pred_dir / f"{image_id}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing predicted mask {path}")
        scores.append(threshold_jaccard(read_mask(path), read_mask(gt_dir / f"{image_id}.png"), args.tau))
    _emit({"command": "eval-seg", "metric": "threshold_jaccard", "value": float(np.mean(scores)),
           "n": len(ids), "params": {"tau": args.tau}, **_provenance(args)})


def _attribute_stack(directory: Path, image_id: str) -> np.ndarray:
    masks = []
    for name in ATTRIBUTES:
        path = directory / attribute_mask_filename(image_id, name)
        if not path.exists():
            raise FileNotFoundError(f"missing attribute mask {path}")
        masks.append(read_mask(path))
    return np.stack(masks)


def cmd_eval_attr(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    suffix = f"_attribute_{ATTRIBUTES[0]}.png"
    ids = sorted(p.name[: -len(suffix)] for p in gt_dir.glob(f"*{suffix}"))
    if not ids:
        raise CLIError(f"no ground-truth attribute masks in {gt_dir}")
    value = attribute_score([_attribute_stack(pred_dir, i) for i in ids],
                            [_attribute_stack(gt_dir, i) for i in ids], pooled=not args.per_image)
    _emit({"command": "eval-attr", "metric": "attribute_jaccard", "value": value, "n": len(ids),
           "params": {"pooled": not args.per_image}, **_provenance(args)})


def cmd_eval_cls(args):
    m = load_manifest(args.manifest, _labels(args))
    outputs = read_model_outputs(args.predictions)
    model_id = args.model_id if args.model_id in outputs else None
    if model_id is None:
        if len(outputs) != 1:
            raise CLIError(f"{args.predictions} holds models {sorted(outputs)}; pick one with --model-id")
        model_id = next(iter(outputs))
    preds = outputs[model_id]
    records = [r for r in _selected_records(args, m) if r.label is not None]
    missing = [r.image_id for r in records if r.image_id not in preds]
    if missing:
        raise CLIError(f"no prediction for {len(missing)} image(s), e.g. {missing[0]!r}")
    y_true = [r.label for r in records]
    y_pred = [int(np.argmax(preds[r.image_id])) for r in records]
    cm = confusion_matrix(y_true, y_pred, m.n_classes)
    present = cm.sum(axis=1) > 0
    value = balanced_accuracy(cm[np.ix_(present, present)]) if args.skip_empty else balanced_accuracy(cm)
    _emit({"command": "eval-cls", "metric": "balanced_accuracy", "value": value, "n": len(records),
           "params": {"model_id": model_id}, **_provenance(args)})


def cmd_synth(args):
    cases = make_corpus(args.n, args.size, args.seed)
    truth = {}
    if args.attributes:
        for c in cases:
            sp = slic_segment(c.image, args.target_k, args.compactness, args.iters)
            truth[c.image_id] = (sp, superpixel_truth(sp, c.attribute_map))
    root = write_corpus(args.out, cases, truth)
    _write_sidecar(Path(root), args)
    _emit({"command": "synth", "n": len(cases), "out": str(root), **_provenance(args)})


# parser -----------------------------------------------------------------------

def _add_manifest(p, role=True):
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", default=None, help="comma-separated label names (default: ISIC 2018 diagnoses)")
    p.add_argument("--root", default=None, help="directory manifest paths are relative to")
    if role:
        p.add_argument("--splits", default=None)
        p.add_argument("--role", default=None)


def _add_augment(p):
    p.add_argument("--augment-spec", default=None, help="key=value augmentation spec file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesionkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key=value config; flags override it")
    common.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("split", cmd_split, "holdout + fold split file")
    _add_manifest(p, role=False)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-frac", type=float, default=0.10)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--val-frac", type=float, default=0.10)

    p = add("stats", cmd_stats, "class counts, frequencies and weights")
    _add_manifest(p)
    p.add_argument("--batches", type=int, default=0, help="also plan this many balanced batches")
    p.add_argument("--batch-size", type=int, default=16)

    p = add("augment-preview", cmd_augment_preview, "write sampled training augmentations")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    _add_augment(p)

    p = add("tta", cmd_tta, "write test-time replicas")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=TTA_MODES, default="full_scenario_j")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    _add_augment(p)

    p = add("train-baseline", cmd_train_baseline, "train the linear-softmax baseline on one fold")
    _add_manifest(p, role=False)
    p.add_argument("--splits", required=True)
    p.add_argument("--fold", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=22)
    p.add_argument("--plateau-patience", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--floor-lr", type=float, default=5e-4)
    p.add_argument("--aug-replicas", type=int, default=4)
    _add_augment(p)

    p = add("predict", cmd_predict, "run predictors over a manifest")
    _add_manifest(p)
    p.add_argument("--predictor", nargs="+", required=True)
    p.add_argument("--out", default="predictions.csv")
    p.add_argument("--masks-out", default=None)
    p.add_argument("--model-id", default="model")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--mode", choices=TTA_MODES, default="full_scenario_j")
    _add_augment(p)

    p = add("ensemble", cmd_ensemble, "mean-ensemble model outputs")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scores", default=None, help="JSON {model_id: holdout score}")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--model-id", default="mean")

    p = add("stack", cmd_stack, "fit (and apply) the boosted-tree stacker")
    _add_manifest(p, role=False)
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--apply", nargs="+", default=None)
    p.add_argument("--out", default="stacked.csv")
    p.add_argument("--model-out", default=None)
    p.add_argument("--model-id", default="stacker")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--shrinkage", type=float, default=0.1)

    p = add("postprocess-seg", cmd_postprocess_seg, "average, binarize, fill holes, upsample")
    p.add_argument("--pred-dirs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--images", default=None, help="original images (for output size)")
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--order", choices=("binarize-first", "upsample-first"), default="binarize-first")

    p = add("segment", cmd_segment, "predict masks and post-process them")
    _add_manifest(p)
    p.add_argument("--predictor", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--order", choices=("binarize-first", "upsample-first"), default="binarize-first")

    p = add("compose-attr", cmd_compose_attr, "superpixel patch classification to attribute masks")
    _add_manifest(p)
    p.add_argument("--predictor", nargs=1, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-k", type=int, default=1000)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--patch-size", type=int, choices=(128, 299), default=128)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--min-count", type=int, default=30)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--prune-mode", choices=("count", "score"), default="count")
    p.add_argument("--min-score", type=float, default=0.5)
    _add_augment(p)

    p = add("eval-seg", cmd_eval_seg, "mean threshold Jaccard of mask directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)

    p = add("eval-attr", cmd_eval_attr, "mean attribute Jaccard")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--per-image", action="store_true", help="average per-image scores instead of pooling")

    p = add("eval-cls", cmd_eval_cls, "balanced (normalized multi-class) accuracy")
    _add_manifest(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--model-id", default=None)
    p.add_argument("--skip-empty", action="store_true", help="ignore classes absent from the evaluated set")

    p = add("synth", cmd_synth, "write the synthetic lesion corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--attributes", action="store_true", help="also write superpixel attribute ground truth")
    p.add_argument("--target-k", type=int, default=400)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=10)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` act as defaults that flags override."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if known.config and command:
        _config_defaults(choices[command], read_kv(known.config), command)
    args = parser.parse_args(argv)
    args.config_hash = _effective_hash(args)
    return args


def _config_defaults(sub: argparse.ArgumentParser, raw: dict, command: str) -> None:
    kv = {k.replace("-", "_"): v for k, v in raw.items()}
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(set(kv) - set(known))
    if unknown:
        raise CLIError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    defaults = {}
    for key, value in kv.items():
        action = known[key]
        if key in _LIST_FLAGS or action.nargs in ("+", "*") or isinstance(action.nargs, int):
            parts = [x.strip() for x in value.split(",")] if key in _LIST_FLAGS else value.split()
            defaults[key] = [action.type(x) if action.type else x for x in parts]
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = parse_bool(value)
        else:
            defaults[key] = value
    sub.set_defaults(**defaults)
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False


def _effective_hash(args: argparse.Namespace) -> str:
    """Hash of every resolved parameter except the seed (reported on its own) and output locations."""
    skip = {"func", "config", "config_hash", "seed"} | _OUTPUT_FLAGS
    return config_hash({k: v for k, v in sorted(vars(args).items()) if k not in skip})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CLIError, ManifestError, SplitError, TrainingDiverged, ValueError, KeyError,
            FileNotFoundError, IndexError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        _emit({"error": str(msg), "type": type(exc).__name__})
        print(f"lesionkit: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
