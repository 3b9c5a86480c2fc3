import json

import numpy as np
import pytest

from dhskit.cli import main
from dhskit.detect_eval import Box, Detection, load_groundtruth, write_records
from dhskit.encode import read_pseudo_image
from dhskit.model_analysis import write_feature_tensor
from dhskit.synthetic import detect_raised_objects, write_dataset

SWIN_T_ROW = {"bed": 87.2, "toilet": 87.7, "night_stand": 51.6, "bathtub": 69.5, "chair": 69.0,
              "dresser": 27.0, "sofa": 60.5, "table": 48.1, "desk": 19.3, "bookshelf": 38.3,
              "sofa_chair": 68.1, "kitchen_counter": 30.7, "kitchen_cabinet": 61.2,
              "garbage_bin": 35.5, "microwave": 41.9, "sink": 47.7}


@pytest.fixture
def dataset(tmp_path, monkeypatch):
    monkeypatch.delenv("DHSKIT_CACHE_DIR", raising=False)
    return write_dataset(tmp_path / "data", 3, seed=1)


def detections_for(images):
    dets = []
    for path in images:
        for box, cat, score in detect_raised_objects(read_pseudo_image(path)):
            dets.append(Detection(path.stem, cat, Box(*box), score))
    return dets


def test_convert_then_eval_perfect(dataset, capsys):
    root = dataset["config"].parent
    assert main(["convert", "--config", str(dataset["config"])]) == 0
    out = root / "out"
    images = [out / f"{f}.png" for f in dataset["frames"]]
    assert all(p.exists() and p.with_suffix(".json").exists() for p in images)
    write_records(root / "dets.jsonl", detections_for(images))
    rc = main(["eval", "--config", str(dataset["config"]), "--gt", str(out / "groundtruth.jsonl"),
               "--det", str(root / "dets.jsonl"), "--iou", "0.5", "--csv", "--out", str(root / "ev")])
    assert rc == 0
    report = json.loads((root / "ev" / "report.json").read_text())
    assert report["subgroups"]["SUNRGBD16"]["AP50"] == pytest.approx(1.0, abs=1e-12)
    assert "100.0" in capsys.readouterr().out
    assert (root / "ev" / "report.csv").read_text().startswith("scope,name,AP")


def test_convert_rerun_is_byte_identical(dataset):
    root = dataset["config"].parent
    assert main(["convert", "--config", str(dataset["config"])]) == 0
    first = {p.name: p.read_bytes() for p in (root / "out").glob("*.*") if p.is_file()}
    assert main(["convert", "--config", str(dataset["config"]), "--jobs", "2"]) == 0
    # a fresh output directory with two workers gives the same bytes
    assert main(["convert", "--config", str(dataset["config"]), "--jobs", "2", "--out", str(root / "b")]) == 0
    second = {p.name: p.read_bytes() for p in (root / "b").glob("*.*") if p.is_file()}
    assert first == second
    assert first == {p.name: p.read_bytes() for p in (root / "out").glob("*.*") if p.is_file()}


def test_convert_isolates_bad_frames(dataset, capsys):
    root = dataset["config"].parent
    (root / f"{dataset['frames'][1]}.png").write_bytes(b"corrupt")
    assert main(["convert", "--config", str(dataset["config"])]) == 1
    err = capsys.readouterr().err
    assert dataset["frames"][1] in err
    summary = json.loads((root / "out" / "convert_summary.json").read_text())
    assert [f["ok"] for f in summary["frames"]] == [True, False, True]


def test_convert_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert main(["convert", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "convert_summary.json").read_text())["frames"] == []


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("manifst: x\n")
    assert main(["convert", "--config", str(cfg)]) == 2
    assert "unknown keys" in capsys.readouterr().err
    cfg.write_text("manifest: missing.jsonl\n")
    assert main(["convert", "--config", str(cfg)]) == 2


def test_augment_preview(dataset):
    root = dataset["config"].parent
    main(["convert", "--config", str(dataset["config"])])
    images = [str(root / "out" / f"{f}.png") for f in dataset["frames"]]
    args = ["augment-preview", *images, "--gt", str(root / "out" / "groundtruth.jsonl"),
            "--count", "2", "--seed", "5"]
    assert main(args + ["--out", str(root / "a1")]) == 0
    assert main(args + ["--out", str(root / "a2")]) == 0
    a1 = sorted(p.name for p in (root / "a1").iterdir())
    assert len([n for n in a1 if n.endswith(".preview.png")]) == 6
    for name in a1:
        assert (root / "a1" / name).read_bytes() == (root / "a2" / name).read_bytes()
    doc = json.loads((root / "a1" / "augment_preview.json").read_text())
    assert all(s["size"][1] in range(480, 801, 32) or s["size"][0] == 1333 for s in doc["samples"])


def test_eval_precomputed(tmp_path, capsys):
    p = tmp_path / "ap.json"
    p.write_text(json.dumps(SWIN_T_ROW))
    rc = main(["eval", "--precomputed", str(p), "--subgroup", "SUNRGBD16", "--subgroup", "SUNRGBD10",
               "--out", str(tmp_path / "ev")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "SUNRGBD16    mAP = 52.71" in out
    assert "SUNRGBD10    mAP = 55.82" in out


def test_eval_missing_subgroup_file(tmp_path, capsys):
    p = tmp_path / "ap.json"
    p.write_text("{}")
    assert main(["eval", "--precomputed", str(p), "--subgroup", str(tmp_path / "nope.txt")]) == 2
    assert "not found" in capsys.readouterr().err


def test_eval_bad_records(tmp_path, capsys):
    g = tmp_path / "g.jsonl"
    g.write_text('{"image_id": 1, "category": "a", "bbox": [0, 0, 1]}\n')
    d = tmp_path / "d.jsonl"
    d.write_text("")
    assert main(["eval", "--gt", str(g), "--det", str(d), "--out", str(tmp_path / "e")]) == 2
    assert "g.jsonl:1" in capsys.readouterr().err


def test_analyze_presets_and_tensor(tmp_path, capsys):
    rng = np.random.default_rng(0)
    t = tmp_path / "feat.bin"
    write_feature_tensor(t, rng.normal(size=(5, 7, 12)).astype("<f4"))
    rc = main(["analyze", "--tensor", str(t), "--zoom", "0.57", "0.7", "--out", str(tmp_path / "an")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "(25, 35, 2048)" in out and "18432" in out and "28x28" in out
    doc = json.loads((tmp_path / "an" / "analysis.json").read_text())
    assert doc["tensors"]["feat.bin"]["grid"] == [4, 3]
    assert sum(doc["tensors"]["feat.bin"]["histogram"]["counts"]) == 5 * 7 * 12
    for suffix in ("_hist.png", "_hist_zoom.png", "_montage.png"):
        assert (tmp_path / "an" / f"feat{suffix}").exists()
    assert main(["report", str(tmp_path / "an" / "analysis.json")]) == 0


def test_analyze_bad_tensor(tmp_path):
    t = tmp_path / "x.bin"
    t.write_bytes(b"nope")
    assert main(["analyze", "--backbone", "resnet50", "--tensor", str(t), "--out", str(tmp_path / "an")]) == 1


def test_report_formats(dataset, capsys):
    root = dataset["config"].parent
    main(["convert", "--config", str(dataset["config"])])
    gt = root / "out" / "groundtruth.jsonl"
    gts = load_groundtruth(gt)
    write_records(root / "d.jsonl", [Detection(g.image_id, g.category, g.box, 1.0) for g in gts])
    main(["eval", "--gt", str(gt), "--det", str(root / "d.jsonl"), "--out", str(root / "ev")])
    capsys.readouterr()
    for fmt in ("text", "markdown", "csv"):
        assert main(["report", str(root / "ev" / "report.json"), "--format", fmt]) == 0
    assert "| scope |" in capsys.readouterr().out
