import json

import pytest

from dhskit.config import ConfigError, PipelineConfig, load_config, load_manifest


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.encode.depth_mode == "range" and cfg.encode.height_percentile == 1.0
    assert cfg.augment.flip_prob == 0.5 and cfg.augment.resize_target_width == 1333
    assert cfg.interpolation == "coco101" and cfg.max_dets == 100


def test_paths_resolve_against_config(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    (tmp_path / "cfg.yaml").write_text("manifest: m.jsonl\noutput_dir: o\nseed: 3\n"
                                       "augment: {flip_prob: 0.25}\neval: {subgroups: [SUNRGBD10]}\n")
    cfg = load_config(tmp_path / "cfg.yaml")
    assert cfg.manifest == tmp_path / "m.jsonl" and cfg.output_dir == tmp_path / "o"
    assert cfg.augment.seed == 3 and cfg.augment.flip_prob == 0.25
    assert cfg.subgroups == ["SUNRGBD10"]


@pytest.mark.parametrize("text, match", [
    ("encode: {depth_mode: sideways}\n", "depth_mode"),
    ("encode: {bit_depth: 12}\n", "bit_depth"),
    ("sensors: {k: {fx: 1}}\n", "missing"),
    ("eval: {subgroups: [nope.yaml]}\n", "not found"),
    ("jobs: 0\n", "jobs"),
    ("augment: {flip: 1}\n", "unknown"),
])
def test_config_rejects(tmp_path, text, match):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(p)


def frame(**kw):
    rec = {"frame_id": "a", "depth": "a.png", "intrinsics": {"fx": 1, "fy": 1, "cx": 0, "cy": 0},
           "rotation": "identity"}
    rec.update(kw)
    return json.dumps(rec)


def test_manifest_jsonl(tmp_path):
    (tmp_path / "gt").mkdir()
    p = tmp_path / "m.jsonl"
    p.write_text(frame(gt="gt/a.jsonl", rotation="r.txt") + "\n\n" + frame(frame_id="b", depth="/abs/b.png") + "\n")
    frames = load_manifest(p)
    assert [f.frame_id for f in frames] == ["a", "b"]
    assert frames[0].gt == tmp_path / "gt" / "a.jsonl"
    assert frames[0].rotation == tmp_path / "r.txt"
    assert str(frames[1].depth) == "/abs/b.png"


def test_manifest_yaml(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("- {frame_id: x, depth: x.png, intrinsics: kin, rotation: camera_level, scale: 5000}\n")
    f = load_manifest(p)[0]
    assert f.scale == 5000 and f.intrinsics == "kin"


@pytest.mark.parametrize("lines, match", [
    ([frame(), frame()], "duplicate"),
    ([frame(extra=1)], "unknown"),
    (['{"frame_id": "a"}'], "missing"),
    (["{bad"], ":1:"),
])
def test_manifest_rejects(tmp_path, lines, match):
    p = tmp_path / "m.jsonl"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ConfigError, match=match):
        load_manifest(p)
