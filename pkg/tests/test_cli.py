import json
import subprocess
import sys

import numpy as np
import pytest

from lesionkit.cli import main
from lesionkit.ensemble import read_model_outputs, write_model_outputs
from lesionkit.imgops import read_image, read_mask
from lesionkit.manifest import load_manifest, make_splits
from lesionkit.metrics import attribute_score
from lesionkit.pipelines import attribute_image, patch_id
from lesionkit.superpixel import ATTRIBUTE_CLASSES, ATTRIBUTES, attribute_mask_filename, slic_segment
from lesionkit.synthetic import DIAGNOSES, noisy_oracle, superpixel_truth

LABELS = ",".join(DIAGNOSES)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, [json.loads(line) for line in out if line.startswith("{")]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(root), "--n", "12", "--size", "64", "--seed", "4", "--attributes",
                 "--target-k", "60"]) == 0
    return root


def test_synth_layout(corpus):
    assert len(list((corpus / "images").glob("*.png"))) == 12
    assert len(list((corpus / "attributes").glob("*.png"))) == 12 * 5
    assert json.loads((corpus / "run.json").read_text())["seed"] == 4


def test_split_deterministic(corpus, tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        code, _ = run(capsys, "split", "--manifest", corpus / "manifest.csv", "--labels", LABELS,
                      "--out", tmp_path / name, "--seed", 7, "--holdout-frac", 0.2)
        assert code == 0
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b and b"# seed=7" in a and b"# config_hash=" in a


def test_eval_seg_identical(corpus, capsys):
    code, reports = run(capsys, "eval-seg", "--pred", corpus / "masks", "--gt", corpus / "masks")
    assert code == 0 and reports[0]["value"] == 1.0 and reports[0]["n"] == 12
    assert reports[0]["params"]["tau"] == 0.65


def test_unknown_flag_and_subcommand(capsys):
    assert main(["eval-seg", "--pred", "x", "--gt", "y", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2


def test_console_script_exit_codes(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lesionkit.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "lesionkit.cli", "eval-seg", "--pred", str(tmp_path),
                           "--gt", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stdout)["type"] == "CLIError"


def test_missing_attribute_mask(corpus, tmp_path, capsys):
    code, reports = run(capsys, "eval-attr", "--pred", tmp_path, "--gt", corpus / "attributes")
    assert code == 2 and reports[0]["type"] == "FileNotFoundError"


def test_eval_attr_identical(corpus, capsys):
    code, reports = run(capsys, "eval-attr", "--pred", corpus / "attributes", "--gt", corpus / "attributes")
    assert code == 0 and reports[0]["value"] == 1.0


def test_config_precedence(corpus, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"manifest={corpus / 'manifest.csv'}\nlabels={LABELS}\nholdout_frac=0.25\nseed=3\n")
    code, reports = run(capsys, "split", "--config", cfg, "--out", tmp_path / "s.csv")
    m = load_manifest(corpus / "manifest.csv", DIAGNOSES)
    assert code == 0 and reports[0]["seed"] == 3
    assert reports[0]["holdout"] == len(make_splits(m, 3, 0.25).holdout)
    code, reports = run(capsys, "split", "--config", cfg, "--out", tmp_path / "s.csv", "--holdout-frac", "0.2",
                        "--seed", 5)
    assert code == 0 and reports[0]["seed"] == 5
    assert reports[0]["holdout"] == len(make_splits(m, 5, 0.2).holdout)
    cfg.write_text("no_such_key=1\n")
    code, reports = run(capsys, "split", "--config", cfg, "--manifest", corpus / "manifest.csv",
                        "--out", tmp_path / "s.csv")
    assert code == 2 and "no_such_key" in reports[0]["error"]


def test_config_hash_changes_with_params(corpus, tmp_path, capsys):
    hashes = set()
    for frac in ("0.2", "0.3"):
        _, reports = run(capsys, "split", "--manifest", corpus / "manifest.csv", "--labels", LABELS,
                         "--out", tmp_path / "s.csv", "--holdout-frac", frac)
        hashes.add(reports[0]["config_hash"])
    assert len(hashes) == 2


def test_stats(corpus, capsys):
    code, reports = run(capsys, "stats", "--manifest", corpus / "manifest.csv", "--labels", LABELS)
    m = load_manifest(corpus / "manifest.csv", DIAGNOSES)
    assert code == 0 and sum(reports[0]["counts"]) == len(m)


def test_stats_bad_label_exit_2(tmp_path, capsys):
    (tmp_path / "m.csv").write_text("image_id,path,label,group_id\na,a.png,XYZ,g\n")
    code, reports = run(capsys, "stats", "--manifest", tmp_path / "m.csv")
    assert code == 2 and "XYZ" in reports[0]["error"]


def test_augment_preview_and_tta(corpus, tmp_path, capsys):
    img = corpus / "images" / "SYN_0000.png"
    code, _ = run(capsys, "augment-preview", "--image", img, "--out", tmp_path / "aug", "--n", 3,
                  "--size", 32, 32)
    assert code == 0 and len(list((tmp_path / "aug").glob("aug_*.png"))) == 3
    assert len((tmp_path / "aug" / "params.jsonl").read_text().splitlines()) == 3
    code, reports = run(capsys, "tta", "--image", img, "--out", tmp_path / "tta", "--mode", "flips_color_only")
    assert code == 0 and reports[0]["replicas"] == 16
    assert len(list((tmp_path / "tta").glob("replica_*.png"))) == 16


def test_segmentation_commands(corpus, tmp_path, capsys):
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps({"kind": "color_threshold_segmenter",
                                "params": {"threshold": 0.5, "softness": 0.05, "resolution": [32, 32]}}))
    code, _ = run(capsys, "predict", "--manifest", corpus / "manifest.csv", "--labels", LABELS,
                  "--predictor", pred, "--masks-out", tmp_path / "probs")
    assert code == 0
    code, _ = run(capsys, "postprocess-seg", "--pred-dirs", tmp_path / "probs", tmp_path / "probs",
                  "--images", corpus / "images", "--out", tmp_path / "final")
    assert code == 0
    code, _ = run(capsys, "segment", "--manifest", corpus / "manifest.csv", "--labels", LABELS,
                  "--predictor", pred, "--out", tmp_path / "direct")
    assert code == 0
    for p in (tmp_path / "final").glob("*.png"):
        assert np.array_equal(read_mask(p), read_mask(tmp_path / "direct" / p.name))
    code, reports = run(capsys, "eval-seg", "--pred", tmp_path / "final", "--gt", corpus / "masks")
    assert code == 0 and reports[0]["value"] >= 0.85


def test_task2_cli_matches_library(corpus, tmp_path, capsys):
    m = load_manifest(corpus / "manifest.csv", DIAGNOSES)
    rng = np.random.default_rng(0)
    rows = []
    for r in m.records:
        img = read_image(corpus / r.path)
        sp = slic_segment(img, 60)
        gt_attr = np.zeros(sp.shape, int)
        for i, name in enumerate(ATTRIBUTES):
            gt_attr[read_mask(corpus / "attributes" / attribute_mask_filename(r.image_id, name))] = i + 1
        noisy = noisy_oracle(superpixel_truth(sp, gt_attr), 0.1, rng)
        for region, cls in enumerate(noisy.classes):
            rows.append((patch_id(r.image_id, region), "oracle", np.eye(len(ATTRIBUTE_CLASSES))[cls]))
    write_model_outputs(tmp_path / "patches.csv", rows)
    spec = tmp_path / "oracle.json"
    spec.write_text(json.dumps({"kind": "file_import", "params": {"path": str(tmp_path / "patches.csv")}}))

    code, _ = run(capsys, "compose-attr", "--manifest", corpus / "manifest.csv", "--labels", LABELS,
                  "--predictor", spec, "--out", tmp_path / "attr", "--target-k", 60, "--min-count", 3)
    assert code == 0
    code, reports = run(capsys, "eval-attr", "--pred", tmp_path / "attr", "--gt", corpus / "attributes")
    assert code == 0

    from lesionkit.backend import PredictorSpec
    predictor = PredictorSpec.load(spec)
    preds, gts = [], []
    for r in m.records:
        _, _, masks = attribute_image(read_image(corpus / r.path), r.image_id, predictor, target_k=60, min_count=3)
        preds.append(masks)
        gts.append(np.stack([read_mask(corpus / "attributes" / attribute_mask_filename(r.image_id, a))
                             for a in ATTRIBUTES]))
    assert reports[0]["value"] == attribute_score(preds, gts)


def test_classification_commands(corpus, tmp_path, capsys):
    base = ["--manifest", corpus / "manifest.csv", "--labels", LABELS]
    code, _ = run(capsys, "split", *base, "--out", tmp_path / "s.csv", "--holdout-frac", 0.25, "--val-frac", 0.2)
    assert code == 0
    code, reports = run(capsys, "train-baseline", *base, "--splits", tmp_path / "s.csv", "--out",
                        tmp_path / "m1.json", "--max-epochs", 5, "--aug-replicas", 1, "--log", tmp_path / "log.csv")
    assert code == 0 and (tmp_path / "log.csv").exists()
    for mid in ("a", "b"):
        code, _ = run(capsys, "predict", *base, "--predictor", tmp_path / "m1.json", "--model-id", mid,
                      "--out", tmp_path / f"{mid}.csv", "--replicas", 2, "--seed", 1 if mid == "a" else 2)
        assert code == 0
    head = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert head == "# seed=1"
    (tmp_path / "scores.json").write_text(json.dumps({"a": 0.5, "b": 0.5}))
    code, reports = run(capsys, "ensemble", "--predictions", tmp_path / "a.csv", tmp_path / "b.csv",
                        "--out", tmp_path / "ens.csv", "--scores", tmp_path / "scores.json", "--top-k", 1)
    assert code == 0 and reports[0]["members"] == ["a"]
    code, reports = run(capsys, "eval-cls", *base, "--predictions", tmp_path / "ens.csv", "--skip-empty")
    assert code == 0 and 0 <= reports[0]["value"] <= 1
    code, reports = run(capsys, "stack", *base, "--train", tmp_path / "a.csv", tmp_path / "b.csv",
                        "--apply", tmp_path / "a.csv", tmp_path / "b.csv", "--out", tmp_path / "st.csv",
                        "--rounds", 3, "--model-out", tmp_path / "st.json")
    assert code == 0 and reports[0]["n_applied"] == 12
    assert set(read_model_outputs(tmp_path / "st.csv")) == {"stacker"}
    code, reports = run(capsys, "predict", *base, "--predictor", tmp_path / "missing.json")
    assert code == 2
