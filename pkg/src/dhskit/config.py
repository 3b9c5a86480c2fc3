"""Pipeline configuration and dataset manifests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentPolicy
from .detect_eval import BUILTIN_SUBGROUPS
from .encode import DEPTH_MODES

CACHE_ENV = "DHSKIT_CACHE_DIR"

_TOP_KEYS = {"manifest", "output_dir", "sensors", "encode", "augment", "eval", "seed", "jobs"}
_SENSOR_KEYS = {"fx", "fy", "cx", "cy", "scale", "bitshift"}
_ENCODE_KEYS = {"depth_mode", "height_percentile", "bit_depth"}
_AUGMENT_KEYS = {"flip_prob", "resize_target_width", "resize_target_heights", "crop_h", "crop_w", "crop_prob"}
_EVAL_KEYS = {"subgroups", "interpolation", "iou_thresholds", "max_dets"}
_FRAME_KEYS = {"frame_id", "depth", "intrinsics", "rotation", "gt", "scale", "bitshift"}


class ConfigError(ValueError):
    pass


def _check_keys(section: str, doc, allowed: set):
    if not isinstance(doc, dict):
        raise ConfigError(f"{section}: expected a mapping")
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")


@dataclass
class EncodeOptions:
    depth_mode: str = "range"
    height_percentile: float = 1.0
    bit_depth: int = 8

    def __post_init__(self):
        if self.depth_mode not in DEPTH_MODES:
            raise ConfigError(f"encode.depth_mode must be one of {DEPTH_MODES}")
        if not 0 <= self.height_percentile <= 100:
            raise ConfigError("encode.height_percentile must lie in [0, 100]")
        if self.bit_depth not in (8, 16):
            raise ConfigError("encode.bit_depth must be 8 or 16")


@dataclass
class PipelineConfig:
    manifest: Path | None = None
    output_dir: Path = Path("out")
    sensors: dict = field(default_factory=dict)
    encode: EncodeOptions = field(default_factory=EncodeOptions)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    subgroups: list = field(default_factory=list)
    interpolation: str = "coco101"
    iou_thresholds: tuple | None = None
    max_dets: int | None = 100
    seed: int = 0
    jobs: int = 1

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "PipelineConfig":
        doc = doc or {}
        _check_keys("config", doc, _TOP_KEYS)
        for name, prof in doc.get("sensors", {}).items():
            _check_keys(f"sensors.{name}", prof, _SENSOR_KEYS)
            missing = {"fx", "fy", "cx", "cy"} - set(prof)
            if missing:
                raise ConfigError(f"sensors.{name}: missing {sorted(missing)}")
        enc = doc.get("encode", {})
        _check_keys("encode", enc, _ENCODE_KEYS)
        aug = doc.get("augment", {})
        _check_keys("augment", aug, _AUGMENT_KEYS)
        ev = doc.get("eval", {})
        _check_keys("eval", ev, _EVAL_KEYS)
        seed = int(doc.get("seed", 0))
        rel = lambda p: Path(p) if Path(p).is_absolute() else base / p
        cfg = cls(
            manifest=rel(doc["manifest"]) if doc.get("manifest") else None,
            output_dir=rel(doc.get("output_dir", "out")),
            sensors=dict(doc.get("sensors", {})),
            encode=EncodeOptions(**enc),
            augment=AugmentPolicy(**aug, seed=seed),
            subgroups=[s if s in BUILTIN_SUBGROUPS else rel(s) for s in ev.get("subgroups", [])],
            interpolation=ev.get("interpolation", "coco101"),
            iou_thresholds=tuple(ev["iou_thresholds"]) if "iou_thresholds" in ev else None,
            max_dets=ev.get("max_dets", 100),
            seed=seed,
            jobs=int(doc.get("jobs", 1)),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.manifest is not None and not Path(self.manifest).exists():
            raise ConfigError(f"manifest not found: {self.manifest}")
        for s in self.subgroups:
            if isinstance(s, Path) and not s.exists():
                raise ConfigError(f"subgroup file not found: {s}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return PipelineConfig.from_dict(doc, path.parent)


@dataclass
class FrameRecord:
    frame_id: str
    depth: Path
    intrinsics: object
    rotation: object
    gt: object = None
    scale: float | None = None
    bitshift: bool | None = None


def load_manifest(path) -> list[FrameRecord]:
    """Frames from JSON Lines or a YAML/JSON list; relative paths resolve against the manifest."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        docs = list(enumerate(yaml.safe_load(text) or [], 1))
    else:
        docs = []
        for n, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    docs.append((n, json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{n}: invalid JSON: {exc.msg}") from None
    base = path.parent
    frames, seen = [], set()
    for n, rec in docs:
        where = f"{path}:{n}"
        _check_keys(where, rec, _FRAME_KEYS)
        for key in ("frame_id", "depth", "intrinsics", "rotation"):
            if key not in rec:
                raise ConfigError(f"{where}: missing {key!r}")
        fid = str(rec["frame_id"])
        if fid in seen:
            raise ConfigError(f"{where}: duplicate frame_id {fid!r}")
        seen.add(fid)
        rel = lambda p: Path(p) if Path(p).is_absolute() else base / p
        rot = rec["rotation"]
        if isinstance(rot, str) and rot not in ("identity", "camera_level"):
            rot = rel(rot)
        intr = rec["intrinsics"]
        if isinstance(intr, str) and (base / intr).exists():
            intr = rel(intr)
        gt = rec.get("gt")
        if isinstance(gt, str):
            gt = rel(gt)
        frames.append(FrameRecord(fid, rel(rec["depth"]), intr, rot, gt, rec.get("scale"), rec.get("bitshift")))
    return frames
