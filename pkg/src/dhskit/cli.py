"""``dhskit`` command line: convert, augment-preview, eval, analyze, report.

Exit status is 0 when every item succeeded, 1 when any frame/file failed
(each failure is listed on stderr), and 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .augment import LabeledImage, image_rng, train_pipeline
from .config import CACHE_ENV, ConfigError, FrameRecord, PipelineConfig, load_config, load_manifest
from .detect_eval import (BUILTIN_SUBGROUPS, COCO_IOU_THRESHOLDS, METRICS, GroundTruth, Box, RecordError,
                          coco_category_names, evaluate, format_tables, load_detections, load_groundtruth,
                          load_precomputed_ap, load_subgroup, subgroup_means, write_records)
from .encode import assemble_dhs, read_pseudo_image, write_pseudo_image
from .ingest import CameraIntrinsics, back_project, decode_depth, gravity_align, load_intrinsics, load_rotation
from .model_analysis import (PRESETS, analysis_table, feature_histogram, feature_montage, load_backbone,
                             read_feature_tensor, resized_input_shape, save_histogram_png, save_montage_png,
                             sparsity_stats)

log = logging.getLogger("dhskit")


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _fail(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ------------------------------------------------------------------- convert

def _frame_sensor(frame: FrameRecord, cfg: PipelineConfig):
    prof = {}
    if isinstance(frame.intrinsics, str) and not Path(frame.intrinsics).exists():
        if frame.intrinsics not in cfg.sensors:
            raise ConfigError(f"unknown sensor profile {frame.intrinsics!r}")
        prof = cfg.sensors[frame.intrinsics]
        k = CameraIntrinsics(*(float(prof[key]) for key in ("fx", "fy", "cx", "cy")))
    else:
        if isinstance(frame.intrinsics, dict):
            prof = frame.intrinsics
        k = load_intrinsics(frame.intrinsics)
    scale = frame.scale if frame.scale is not None else prof.get("scale", 1000.0)
    bitshift = frame.bitshift if frame.bitshift is not None else prof.get("bitshift", False)
    return k, float(scale), bool(bitshift)


def convert_frame(frame: FrameRecord, cfg: PipelineConfig, out_dir: Path, cache_dir: Path) -> dict:
    """Convert one manifest frame; never raises, reports failures in the result."""
    png = out_dir / f"{frame.frame_id}.png"
    result = {"frame_id": frame.frame_id, "output": png.name}
    try:
        k, scale, bitshift = _frame_sensor(frame, cfg)
        g = load_rotation(frame.rotation)
        data = Path(frame.depth).read_bytes()
        h = hashlib.sha256(data)
        h.update(json.dumps({
            "intrinsics": [k.fx, k.fy, k.cx, k.cy], "rotation": g.rotation.tolist(),
            "scale": scale, "bitshift": bitshift, "encode": asdict(cfg.encode), "version": __version__,
        }, sort_keys=True).encode())
        digest = h.hexdigest()
        stamp = cache_dir / f"{frame.frame_id}.sha256"
        if png.exists() and stamp.exists() and stamp.read_text() == digest:
            result["skipped"] = True
            return result
        depth = decode_depth(data, scale=scale, bitshift=bitshift)
        cloud = gravity_align(back_project(depth, k), g)
        img = assemble_dhs(cloud, cfg.encode.depth_mode, cfg.encode.height_percentile)
        meta = dict(img.meta, frame_id=frame.frame_id, source_digest=digest,
                    intrinsics=[k.fx, k.fy, k.cx, k.cy], rotation=g.rotation.tolist(),
                    scale=scale, bitshift=bitshift)
        write_pseudo_image(replace(img, meta=meta), png, cfg.encode.bit_depth)
        stamp.write_text(digest)
    except Exception as exc:  # per-frame isolation
        result["error"] = f"{type(exc).__name__}: {exc}"
    return result


def _frame_groundtruth(frame: FrameRecord) -> list[GroundTruth]:
    if frame.gt is None:
        return []
    if isinstance(frame.gt, (str, Path)):
        return [GroundTruth(frame.frame_id, g.category, g.box) for g in load_groundtruth(frame.gt, default_image_id=frame.frame_id)]
    return [GroundTruth(frame.frame_id, r["category"], Box(*map(float, r["bbox"]))) for r in frame.gt]


def cmd_convert(args, cfg: PipelineConfig) -> int:
    manifest = Path(args.manifest) if args.manifest else cfg.manifest
    if manifest is None:
        _fail("no manifest given (--manifest or config 'manifest')")
        return 2
    out_dir = Path(args.out) if args.out else cfg.output_dir
    frames = load_manifest(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(os.environ.get(CACHE_ENV) or out_dir / ".dhskit-cache") / "convert"
    cache_dir.mkdir(parents=True, exist_ok=True)

    if cfg.jobs > 1 and len(frames) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(convert_frame, frames, [cfg] * len(frames),
                                    [out_dir] * len(frames), [cache_dir] * len(frames)))
    else:
        results = [convert_frame(f, cfg, out_dir, cache_dir) for f in frames]

    failed = [r for r in results if "error" in r]
    for r in results:
        if "error" in r:
            print(f"frame {r['frame_id']}: {r['error']}", file=sys.stderr)
        elif r.pop("skipped", False):
            log.info("frame %s up to date, skipped", r["frame_id"])

    gts, gt_errors = [], []
    for f in frames:
        try:
            gts.extend(_frame_groundtruth(f))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            gt_errors.append(f.frame_id)
            print(f"frame {f.frame_id}: ground truth: {exc}", file=sys.stderr)
    if any(f.gt is not None for f in frames):
        write_records(out_dir / "groundtruth.jsonl", gts)

    _dump(out_dir / "convert_summary.json", {
        "frames": [{"frame_id": r["frame_id"], "output": r["output"], "ok": "error" not in r} for r in results],
        "encode": asdict(cfg.encode),
    })
    n_bad = len(failed) + len(gt_errors)
    log.info("converted %d/%d frames", len(results) - len(failed), len(results))
    return 1 if n_bad else 0


# ------------------------------------------------------------ augment-preview

def _draw_preview(li: LabeledImage) -> np.ndarray:
    img = np.floor(li.image.channels[..., ::-1] * 255 + 0.5).astype(np.uint8).copy()
    for (x, y, w, h), lab in zip(li.boxes, li.labels):
        p1 = (int(round(x)), int(round(y)))
        p2 = (int(round(x + w)) - 1, int(round(y + h)) - 1)
        cv2.rectangle(img, p1, p2, (255, 255, 255), 1)
        cv2.putText(img, str(lab), (p1[0], max(p1[1] - 3, 10)), cv2.FONT_HERSHEY_SIMPLEX, 0.4, (255, 255, 255), 1)
    return img


def cmd_augment_preview(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out) if args.out else cfg.output_dir / "augment"
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = replace(cfg.augment, seed=cfg.seed)
    if args.flip_prob is not None or args.crop_prob is not None:
        policy = replace(policy,
                         flip_prob=policy.flip_prob if args.flip_prob is None else args.flip_prob,
                         crop_prob=policy.crop_prob if args.crop_prob is None else args.crop_prob)
    by_image = {}
    if args.gt:
        for g in load_groundtruth(args.gt):
            by_image.setdefault(str(g.image_id), []).append(g)

    records, aug_gt, failures = [], [], 0
    for i, path in enumerate(args.images):
        path = Path(path)
        try:
            img = read_pseudo_image(path)
        except (OSError, ValueError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        gts = by_image.get(path.stem, [])
        li = LabeledImage(img, [g.box.as_tuple() for g in gts], [g.category for g in gts])
        for s in range(args.count):
            rng = image_rng(policy.seed, i * args.count + s)
            out = train_pipeline(li, policy, rng)
            name = f"{path.stem}_aug{s}"
            write_pseudo_image(replace(out.image, meta=dict(out.image.meta, augment_ops=list(out.ops),
                                                            augment_seed=[policy.seed, i * args.count + s])),
                               out_dir / f"{name}.png")
            cv2.imwrite(str(out_dir / f"{name}.preview.png"), _draw_preview(out))
            aug_gt.extend(GroundTruth(name, lab, Box(*map(float, b))) for b, lab in zip(out.boxes, out.labels))
            records.append({"source": path.name, "sample": s, "output": f"{name}.png",
                            "seed": [policy.seed, i * args.count + s], "ops": list(out.ops),
                            "size": [out.width, out.height],
                            "boxes": out.boxes.tolist(), "labels": list(out.labels)})
    write_records(out_dir / "groundtruth.jsonl", aug_gt)
    _dump(out_dir / "augment_preview.json", {"policy": asdict(policy), "samples": records})
    return 1 if failures else 0


# --------------------------------------------------------------------- eval

def _subgroups(names) -> list:
    out = []
    for s in names:
        s = str(s)
        if s in BUILTIN_SUBGROUPS:
            out.append(BUILTIN_SUBGROUPS[s])
        else:
            out.append(load_subgroup(s))
    return out


def cmd_eval(args, cfg: PipelineConfig) -> int:
    names = list(args.subgroup or cfg.subgroups)
    missing = [s for s in names if str(s) not in BUILTIN_SUBGROUPS and not Path(s).exists()]
    if missing:
        _fail(f"subgroup file(s) not found: {', '.join(map(str, missing))}")
        return 2
    specs = _subgroups(names)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.precomputed:
        values = load_precomputed_ap(args.precomputed)
        means = {s.name: subgroup_means(values, s) for s in specs}
        doc = {"precomputed": values, "subgroups": means, "interpolation": "as supplied"}
        _dump(out_dir / "report.json", doc)
        for name, v in means.items():
            print(f"{name:<12s} mAP = {'N/A' if v is None else f'{v:.2f}'}")
        return 0

    if not (args.gt and args.det):
        _fail("eval needs --gt and --det, or --precomputed")
        return 2
    names_map = coco_category_names(args.gt)
    gts = load_groundtruth(args.gt)
    dets = load_detections(args.det, names_map)
    thrs = tuple(args.iou) if args.iou else (cfg.iou_thresholds or COCO_IOU_THRESHOLDS)
    report = evaluate(dets, gts, iou_thresholds=thrs, subgroups=specs,
                      max_dets=cfg.max_dets, interpolation=args.interpolation or cfg.interpolation)
    _dump(out_dir / "report.json", report.to_dict())
    if args.csv:
        (out_dir / "report.csv").write_text(report.to_csv())
    print(format_tables(report))
    if report.unknown_categories:
        log.warning("detections with unknown categories: %s", report.unknown_categories)
    return 0


# ------------------------------------------------------------------ analyze

def default_grid(channels: int) -> tuple[int, int]:
    """(rows, cols) with cols the largest divisor of ``channels`` not above its square root."""
    cols = max(d for d in range(1, int(channels ** 0.5) + 1) if channels % d == 0)
    return channels // cols, cols


def cmd_analyze(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out) if args.out else cfg.output_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"backbones": {}, "tensors": {}}
    for name in args.backbone or list(PRESETS):
        spec = load_backbone(name)
        rows = analysis_table(spec)
        doc["backbones"][spec.name] = {"input_shape": list(spec.input_shape),
                                       "resized_shape": list(resized_input_shape(spec)), "blocks": rows}
        print(render_analysis(spec.name, doc["backbones"][spec.name]))

    failures = 0
    for path in args.tensor or []:
        path = Path(path)
        try:
            t = read_feature_tensor(path)
        except (OSError, ValueError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        grid = tuple(args.grid) if args.grid else default_grid(t.shape[2])
        full = feature_histogram(t, bins=args.bins)
        entry = {"shape": list(t.shape), "grid": list(grid),
                 "sparsity": {"eps": args.eps, "fraction": sparsity_stats(t, args.eps)},
                 "histogram": {"value_min": full.value_min, "value_max": full.value_max,
                               "counts": full.counts.tolist()}}
        save_histogram_png(full, out_dir / f"{path.stem}_hist.png", f"{path.stem} (min-max normalized)")
        if args.zoom:
            z = feature_histogram(t, zoom=tuple(args.zoom), bins=args.bins)
            entry["zoom_histogram"] = {"range": list(z.zoom), "counts": z.counts.tolist(), "total": z.total}
            save_histogram_png(z, out_dir / f"{path.stem}_hist_zoom.png", f"{path.stem} zoom {z.zoom}")
        try:
            save_montage_png(feature_montage(t, grid), out_dir / f"{path.stem}_montage.png")
        except ValueError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
        doc["tensors"][path.name] = entry
    _dump(out_dir / "analysis.json", doc)
    return 1 if failures else 0


def render_analysis(name: str, entry: dict) -> str:
    lines = [f"{name}: input {tuple(entry['input_shape'])} -> resized {tuple(entry['resized_shape'])}",
             f"  {'block':<8s} {'shape':<18s} {'local RF':>9s} {'cum. RF':>9s} {'heads':>6s} {'head*dim':>9s}"]
    for r in entry["blocks"]:
        rf = "{}x{}".format(*r["local_rf"])
        crf = "-" if r["cumulative_rf"] is None else "{}x{}".format(*r["cumulative_rf"])
        lines.append(f"  {r['block']:<8s} {str(tuple(r['shape'])):<18s} {rf:>9s} {crf:>9s} "
                     f"{r['heads']:>6d} {r['head_dim']:>9d}")
    return "\n".join(lines)


# ------------------------------------------------------------------- report

def cmd_report(args, cfg: PipelineConfig) -> int:
    doc = json.loads(Path(args.file).read_text())
    fmt = args.format
    if "backbones" in doc:
        for name, entry in doc["backbones"].items():
            print(render_analysis(name, entry))
        return 0
    if "precomputed" in doc:
        for name, v in doc["subgroups"].items():
            print(f"{name:<12s} mAP = {'N/A' if v is None else f'{v:.2f}'}")
        return 0
    rows = [(c, m) for c, m in doc["categories"].items()] + [(c, m) for c, m in doc.get("others", {}).items()]
    groups = [("all", doc["summary"]), *doc["subgroups"].items()]
    pct = lambda v: "N/A" if v is None else f"{100 * v:.1f}"
    if fmt == "csv":
        print("scope,name," + ",".join(METRICS))
        for c, m in rows:
            print(f"category,{c}," + ",".join(pct(m[k]) for k in METRICS))
        for g, m in groups:
            print(f"subgroup,{g}," + ",".join(pct(m[k]) for k in METRICS))
    elif fmt == "markdown":
        print("| category | AP50 |\n|---|---|")
        for c, m in rows:
            print(f"| {c} | {pct(m['AP50'])} |")
        print("\n| scope | " + " | ".join(METRICS) + " |\n|---|" + "---|" * len(METRICS))
        for g, m in groups:
            print(f"| {g} | " + " | ".join(pct(m[k]) for k in METRICS) + " |")
    else:
        for c, m in rows:
            print(f"{c:<20s} AP50 {pct(m['AP50']):>6s}")
        for g, m in groups:
            print(f"{g:<20s} " + " ".join(f"{k} {pct(m[k]):>5s}" for k in METRICS))
    return 0


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (YAML); flags override it")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dhskit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", parents=[common], help="depth frames -> DHS pseudo-images")
    c.add_argument("--manifest")
    c.add_argument("--out")
    c.add_argument("--bit-depth", type=int, choices=(8, 16))
    c.add_argument("--depth-mode", choices=("range", "optical_axis"))
    c.set_defaults(func=cmd_convert)

    a = sub.add_parser("augment-preview", parents=[common], help="apply the training augmentation to pseudo-images")
    a.add_argument("images", nargs="+")
    a.add_argument("--gt", help="ground truth with image_id = image file stem")
    a.add_argument("--count", type=int, default=1)
    a.add_argument("--flip-prob", type=float)
    a.add_argument("--crop-prob", type=float)
    a.add_argument("--out")
    a.set_defaults(func=cmd_augment_preview)

    e = sub.add_parser("eval", parents=[common], help="COCO-style detection AP with subgroups")
    e.add_argument("--gt")
    e.add_argument("--det")
    e.add_argument("--precomputed", help="per-category AP file; report subgroup means only")
    e.add_argument("--subgroup", action="append", help="subgroup file or SUNRGBD10/SUNRGBD16 (repeatable)")
    e.add_argument("--interpolation", choices=("coco101", "voc11"))
    e.add_argument("--iou", type=float, nargs="+")
    e.add_argument("--csv", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    z = sub.add_parser("analyze", parents=[common], help="backbone table and feature-map diagnostics")
    z.add_argument("--backbone", action="append", help=f"preset ({', '.join(PRESETS)}) or spec file")
    z.add_argument("--tensor", action="append", help="feature dump (.npy or binary with header)")
    z.add_argument("--zoom", type=float, nargs=2, metavar=("LO", "HI"))
    z.add_argument("--bins", type=int, default=100)
    z.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"))
    z.add_argument("--eps", type=float, default=1e-6)
    z.add_argument("--out")
    z.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", parents=[common], help="render a saved report.json / analysis.json")
    r.add_argument("file")
    r.add_argument("--format", choices=("text", "markdown", "csv"), default="text")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if getattr(args, "bit_depth", None):
            cfg.encode.bit_depth = args.bit_depth
        if getattr(args, "depth_mode", None):
            cfg.encode.depth_mode = args.depth_mode
        cfg.augment = replace(cfg.augment, seed=cfg.seed)
        cfg.validate()
        return args.func(args, cfg)
    except (ConfigError, RecordError) as exc:
        _fail(str(exc))
        return 2
    except (OSError, ValueError) as exc:
        _fail(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
