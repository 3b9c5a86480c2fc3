"""COCO-protocol 2D box evaluation with category subgroups.

Matching is greedy per image and category: detections are visited by
descending score (ties keep input order) and each takes the still-unmatched
ground truth with the highest IoU at or above the threshold, preferring
ground truth inside the current area range. A detection matched to
out-of-range ground truth, or unmatched and itself out of range, is ignored
rather than counted as a false positive.

AP is the mean interpolated precision over a recall grid: 101 points for the
COCO metric, 11 for the older PASCAL one. Values are fractions in [0, 1];
report tables print percentages.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import yaml

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRIDS = {
    "coco101": tuple(i / 100 for i in range(101)),
    "voc11": tuple(i / 10 for i in range(11)),
}
METRICS = ("AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L")

# The 16 SUN RGB-D benchmark categories in reporting order; the first ten form SUNRGBD10.
SUNRGBD16_CATEGORIES = (
    "bed", "toilet", "night_stand", "bathtub", "chair", "dresser", "sofa", "table",
    "desk", "bookshelf", "sofa_chair", "kitchen_counter", "kitchen_cabinet",
    "garbage_bin", "microwave", "sink",
)


class RecordError(ValueError):
    def __init__(self, source, line, message):
        self.source, self.line = source, line
        super().__init__(f"{source}:{line}: {message}")


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite: {vals}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box width/height must be non-negative: {vals}")

    @property
    def area(self):
        return self.w * self.h

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    category: Hashable
    box: Box
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: Hashable
    category: Hashable
    box: Box


@dataclass(frozen=True)
class AreaRange:
    name: str
    lo: float = 0.0
    hi: float = math.inf
    lo_closed: bool = True
    hi_closed: bool = True

    def contains(self, area: float) -> bool:
        above = area >= self.lo if self.lo_closed else area > self.lo
        below = area <= self.hi if self.hi_closed else area < self.hi
        return above and below


COCO_AREA_RANGES = (
    AreaRange("all"),
    AreaRange("small", 0.0, 32.0 ** 2, hi_closed=False),
    AreaRange("medium", 32.0 ** 2, 96.0 ** 2),
    AreaRange("large", 96.0 ** 2, math.inf, lo_closed=False),
)


@dataclass(frozen=True)
class SubgroupSpec:
    name: str
    categories: tuple
    others: bool = False
    others_name: str = "others"

    def __post_init__(self):
        cats = tuple(self.categories)
        if not cats:
            raise ValueError(f"subgroup {self.name!r} is empty")
        dup = [c for c, n in Counter(cats).items() if n > 1]
        if dup:
            raise ValueError(f"subgroup {self.name!r} repeats categories {dup}")
        if self.others and self.others_name in cats:
            raise ValueError(f"subgroup {self.name!r} lists its others bucket {self.others_name!r}")
        object.__setattr__(self, "categories", cats)

    @property
    def members(self) -> tuple:
        return self.categories + ((self.others_name,) if self.others else ())


SUNRGBD16 = SubgroupSpec("SUNRGBD16", SUNRGBD16_CATEGORIES)
SUNRGBD10 = SubgroupSpec("SUNRGBD10", SUNRGBD16_CATEGORIES[:10])
BUILTIN_SUBGROUPS = {"SUNRGBD10": SUNRGBD10, "SUNRGBD16": SUNRGBD16}


def iou(a, b) -> float:
    """IoU of two ``(x, y, w, h)`` boxes; 0 when the union is empty."""
    ax, ay, aw, ah = a.as_tuple() if isinstance(a, Box) else a
    bx, by, bw, bh = b.as_tuple() if isinstance(b, Box) else b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    inter = iw * ih if iw > 0 and ih > 0 else 0
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(dets: np.ndarray, gts: np.ndarray) -> np.ndarray:
    dets = np.asarray(dets, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    d1, g1 = dets[:, None, :2], gts[None, :, :2]
    d2, g2 = d1 + dets[:, None, 2:], g1 + gts[None, :, 2:]
    wh = np.clip(np.minimum(d2, g2) - np.maximum(d1, g1), 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = (dets[:, 2] * dets[:, 3])[:, None] + (gts[:, 2] * gts[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def _greedy(order, ious, thr, gt_ignore):
    matched = [-1] * len(ious)
    used = [False] * len(gt_ignore)
    for d in order:
        row = ious[d]
        best, best_iou, best_ig = -1, 0.0, True
        for g, v in enumerate(row):
            if used[g] or v < thr:
                continue
            ig = gt_ignore[g]
            if best < 0 or (best_ig and not ig) or (ig == best_ig and v > best_iou):
                best, best_iou, best_ig = g, v, ig
        if best >= 0:
            used[best] = True
            matched[d] = best
    return matched


def match(det_boxes, det_scores, gt_boxes, thr: float, gt_ignore=None) -> np.ndarray:
    """Greedy single-use matching for one image and category.

    Returns, in input order, the index of the ground truth each detection
    matched, or -1.
    """
    scores = np.asarray(det_scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable").tolist()
    ious = iou_matrix(det_boxes, gt_boxes).tolist()
    n_gt = len(np.asarray(gt_boxes).reshape(-1, 4))
    ign = [False] * n_gt if gt_ignore is None else [bool(v) for v in gt_ignore]
    return np.array(_greedy(order, ious, thr, ign), dtype=int)


def average_precision(tp, scores, n_gt: int, interpolation: str = "coco101") -> float | None:
    """Interpolated AP of detections given TP flags; ``None`` when there is no ground truth."""
    if n_gt <= 0:
        return None
    grid = np.array(RECALL_GRIDS[interpolation])
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, grid, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def subgroup_means(values: Mapping, spec: SubgroupSpec) -> float | None:
    """Unweighted mean over subgroup members that have a value (not None/NaN)."""
    got = [values[c] for c in spec.members if c in values and values[c] is not None
           and not (isinstance(values[c], float) and math.isnan(values[c]))]
    return float(np.mean(got)) if got else None


def _metric_value(x) -> float | None:
    return None if x is None or np.isnan(x) else float(x)


@dataclass
class EvalReport:
    categories: tuple
    iou_thresholds: tuple
    area_ranges: tuple
    ap: np.ndarray                       # K x T x A, NaN where no ground truth
    n_gt: np.ndarray                     # K x A
    interpolation: str = "coco101"
    subgroups: dict = field(default_factory=dict)
    subgroup_members: dict = field(default_factory=dict)
    extra_categories: dict = field(default_factory=dict)
    unknown_categories: dict = field(default_factory=dict)

    def get(self, category, thr: float, area: str = "all") -> float | None:
        k = self.categories.index(category)
        t = self._thr_index(thr)
        a = self.area_ranges.index(area)
        return _metric_value(self.ap[k, t, a])

    def _thr_index(self, thr):
        hits = [i for i, t in enumerate(self.iou_thresholds) if abs(t - thr) < 1e-9]
        if not hits:
            raise KeyError(f"IoU threshold {thr} was not evaluated")
        return hits[0]

    def _area_mean(self, k, area):
        if area not in self.area_ranges:
            return None
        row = self.ap[k, :, self.area_ranges.index(area)]
        return None if np.isnan(row).all() else float(np.nanmean(row))

    def category_metrics(self, category) -> dict:
        if category in self.extra_categories:
            return dict(self.extra_categories[category])
        k = self.categories.index(category)
        out = {}
        for name, thr in (("AP50", 0.5), ("AP75", 0.75)):
            try:
                out[name] = self.get(category, thr)
            except KeyError:
                out[name] = None
        out["AP"] = self._area_mean(k, "all")
        for name, area in (("AP_S", "small"), ("AP_M", "medium"), ("AP_L", "large")):
            out[name] = self._area_mean(k, area)
        return {m: out[m] for m in METRICS}

    def summary(self, categories: Iterable | None = None) -> dict:
        cats = self.categories if categories is None else tuple(categories)
        per = [self.category_metrics(c) for c in cats]
        out = {}
        for m in METRICS:
            vals = [p[m] for p in per if p[m] is not None]
            out[m] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        cells = []
        for k, cat in enumerate(self.categories):
            for t, thr in enumerate(self.iou_thresholds):
                for a, area in enumerate(self.area_ranges):
                    cells.append({"category": cat, "iou": thr, "area": area,
                                  "ap": _metric_value(self.ap[k, t, a])})
        return {
            "interpolation": self.interpolation,
            "iou_thresholds": list(self.iou_thresholds),
            "area_ranges": list(self.area_ranges),
            "categories": {str(c): self.category_metrics(c) for c in self.categories},
            "n_gt": {str(c): dict(zip(self.area_ranges, map(int, self.n_gt[k])))
                     for k, c in enumerate(self.categories)},
            "others": {str(c): v for c, v in self.extra_categories.items()},
            "summary": self.summary(),
            "subgroups": self.subgroups,
            "subgroup_members": {k: [str(c) for c in v] for k, v in self.subgroup_members.items()},
            "unknown_categories": {str(k): v for k, v in self.unknown_categories.items()},
            "cells": cells,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "name", *METRICS])
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        for c in self.categories:
            m = self.category_metrics(c)
            w.writerow(["category", c, *(fmt(m[k]) for k in METRICS)])
        for c, m in self.extra_categories.items():
            w.writerow(["category", c, *(fmt(m[k]) for k in METRICS)])
        for name, m in self.subgroups.items():
            w.writerow(["subgroup", name, *(fmt(m[k]) for k in METRICS)])
        return buf.getvalue()


def _vocabulary(gts, subgroups, categories):
    if categories is not None:
        return tuple(categories)
    seen = {}
    for g in gts:
        seen.setdefault(g.category, None)
    for spec in subgroups:
        for c in spec.categories:
            seen.setdefault(c, None)
    return tuple(seen)


def evaluate(
    detections: Sequence[Detection],
    groundtruths: Sequence[GroundTruth],
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    area_ranges: Sequence[AreaRange] = COCO_AREA_RANGES,
    subgroups: Sequence[SubgroupSpec] = (),
    categories: Sequence | None = None,
    max_dets: int | None = 100,
    interpolation: str = "coco101",
) -> EvalReport:
    if interpolation not in RECALL_GRIDS:
        raise ValueError(f"interpolation must be one of {sorted(RECALL_GRIDS)}")
    vocab = _vocabulary(groundtruths, subgroups, categories)
    k_index = {c: k for k, c in enumerate(vocab)}
    thrs = tuple(float(t) for t in iou_thresholds)
    areas = tuple(area_ranges)

    unknown = Counter(d.category for d in detections if d.category not in k_index)
    gt_cells = defaultdict(list)
    dt_cells = defaultdict(list)
    for g in groundtruths:
        if g.category in k_index:
            gt_cells[g.category, g.image_id].append(g)
    for i, d in enumerate(detections):
        if d.category in k_index:
            dt_cells[d.category, d.image_id].append((i, d))

    K, T, A = len(vocab), len(thrs), len(areas)
    n_gt = np.zeros((K, A), dtype=int)
    # per (k, t, a): list of (score, input index, tp) for non-ignored detections
    acc = defaultdict(list)
    for key in set(gt_cells) | set(dt_cells):
        cat = key[0]
        k = k_index[cat]
        gts = gt_cells.get(key, [])
        dts = dt_cells.get(key, [])
        dts = sorted(dts, key=lambda p: -p[1].score)
        if max_dets is not None:
            dts = dts[:max_dets]
        ious = iou_matrix([d.box.as_tuple() for _, d in dts], [g.box.as_tuple() for g in gts]).tolist()
        order = list(range(len(dts)))
        for a, rng in enumerate(areas):
            gt_ig = [not rng.contains(g.box.area) for g in gts]
            dt_out = [not rng.contains(d.box.area) for _, d in dts]
            n_gt[k, a] += gt_ig.count(False)
            for t, thr in enumerate(thrs):
                matched = _greedy(order, ious, thr, gt_ig)
                bucket = acc[k, t, a]
                for j, (i, d) in enumerate(dts):
                    m = matched[j]
                    ignored = gt_ig[m] if m >= 0 else dt_out[j]
                    if not ignored:
                        bucket.append((d.score, i, m >= 0))

    ap = np.full((K, T, A), np.nan)
    for k in range(K):
        for a in range(A):
            if n_gt[k, a] == 0:
                continue
            for t in range(T):
                rows = sorted(acc.get((k, t, a), ()), key=lambda r: (-r[0], r[1]))
                value = average_precision([r[2] for r in rows], [r[0] for r in rows],
                                          int(n_gt[k, a]), interpolation)
                ap[k, t, a] = value

    report = EvalReport(vocab, thrs, tuple(r.name for r in areas), ap, n_gt, interpolation,
                        unknown_categories=dict(unknown))

    for spec in subgroups:
        if spec.others:
            members = set(spec.categories)
            remap = lambda c: c if c in members else spec.others_name
            sub = evaluate(
                [Detection(d.image_id, remap(d.category), d.box, d.score) for d in detections],
                [GroundTruth(g.image_id, remap(g.category), g.box) for g in groundtruths],
                thrs, areas, (), (spec.others_name,), max_dets, interpolation,
            )
            report.extra_categories[spec.others_name] = sub.category_metrics(spec.others_name)
        per_cat = {c: report.category_metrics(c) for c in spec.members if c in k_index or c in report.extra_categories}
        report.subgroups[spec.name] = {
            m: subgroup_means({c: v[m] for c, v in per_cat.items()}, spec) for m in METRICS
        }
        report.subgroup_members[spec.name] = spec.members
    return report


# ---------------------------------------------------------------- records I/O

def _parse_box(raw, source, line):
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise RecordError(source, line, f"bbox must be [x, y, w, h], got {raw!r}")
    try:
        return Box(*(float(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise RecordError(source, line, str(exc)) from None


def _records(path):
    """Yield (line/record number, dict) from JSON Lines, a JSON list, or a COCO document."""
    path = Path(path)
    text = path.read_text()
    stripped = text.lstrip()
    if not stripped:
        return [], {}
    if stripped[0] in "[{":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            doc = None
        if isinstance(doc, list):
            return list(enumerate(doc, 1)), {}
        if isinstance(doc, dict) and "annotations" in doc:
            names = {c["id"]: c.get("name", c["id"]) for c in doc.get("categories", [])}
            return list(enumerate(doc["annotations"], 1)), names
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append((n, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise RecordError(path, n, f"invalid JSON: {exc.msg}") from None
    return out, {}


def _load(path, with_score, category_names=None, default_image_id=None):
    records, names = _records(path)
    names = {**names, **(category_names or {})}
    seen = set()
    out = []
    for n, rec in records:
        if not isinstance(rec, dict):
            raise RecordError(path, n, "record is not an object")
        if "image_id" not in rec:
            if default_image_id is None:
                raise RecordError(path, n, "missing image_id")
            rec = {**rec, "image_id": default_image_id}
        if "category" in rec:
            cat = rec["category"]
        elif "category_id" in rec:
            cat = names.get(rec["category_id"], rec["category_id"])
        else:
            raise RecordError(path, n, "missing category")
        box = _parse_box(rec.get("bbox"), path, n)
        if "id" in rec:
            key = (rec["image_id"], rec["id"])
            if key in seen:
                raise RecordError(path, n, f"duplicate record {key}")
            seen.add(key)
        if with_score:
            if "score" not in rec:
                raise RecordError(path, n, "detection without score")
            try:
                out.append(Detection(rec["image_id"], cat, box, float(rec["score"])))
            except (TypeError, ValueError) as exc:
                raise RecordError(path, n, str(exc)) from None
        else:
            out.append(GroundTruth(rec["image_id"], cat, box))
    return out


def load_detections(path, category_names: Mapping | None = None) -> list[Detection]:
    return _load(path, True, category_names)


def load_groundtruth(path, category_names: Mapping | None = None,
                     default_image_id=None) -> list[GroundTruth]:
    """Ground-truth boxes; ``default_image_id`` fills records that omit ``image_id``."""
    return _load(path, False, category_names, default_image_id)


def coco_category_names(path) -> dict:
    """``id -> name`` from a COCO document's categories, or {} for other formats."""
    return _records(path)[1]


def write_records(path, items: Iterable[Detection | GroundTruth]) -> None:
    lines = []
    for i, it in enumerate(items):
        rec = {"id": i, "image_id": it.image_id, "category": it.category, "bbox": list(it.box.as_tuple())}
        if isinstance(it, Detection):
            rec["score"] = it.score
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_subgroup(path) -> SubgroupSpec:
    """Read a subgroup from YAML/JSON (``name``, ``categories``, ``others``) or plain text.

    Plain text holds one category per line and takes its name from the file stem.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml", ".json"):
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict) or "categories" not in doc:
            raise ValueError(f"{path}: subgroup file needs a 'categories' list")
        unknown = set(doc) - {"name", "categories", "others", "others_name"}
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
        return SubgroupSpec(doc.get("name", path.stem), tuple(doc["categories"]),
                            bool(doc.get("others", False)), doc.get("others_name", "others"))
    cats = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return SubgroupSpec(path.stem, tuple(cats))


def load_precomputed_ap(path) -> dict:
    """Per-category AP values from JSON/YAML ``{category: ap}`` or a two-column CSV."""
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if rows and rows[0][0].strip().lower() == "category":
            rows = rows[1:]
        return {r[0].strip(): (None if r[1].strip().upper() in ("", "N/A", "NA") else float(r[1])) for r in rows}
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping of category -> AP")
    return {k: (None if v in (None, "N/A") else float(v)) for k, v in doc.items()}


def format_tables(report: EvalReport) -> str:
    """Console rendering laid out like the per-category AP50 table and the subgroup metric table."""
    pct = lambda v: "  N/A" if v is None else f"{100 * v:5.1f}"
    lines = ["Per-category AP50 (IoU 0.5)"]
    for c in report.categories:
        lines.append(f"  {str(c):<20s} {pct(report.category_metrics(c)['AP50'])}")
    for c, m in report.extra_categories.items():
        lines.append(f"  {str(c):<20s} {pct(m['AP50'])}")
    lines.append("")
    lines.append(f"{'scope':<20s} " + " ".join(f"{m:>6s}" for m in METRICS))
    rows = [("all", report.summary()), *report.subgroups.items()]
    for name, vals in rows:
        lines.append(f"{name:<20s} " + " ".join(f"{pct(vals[m]):>6s}" for m in METRICS))
    if report.unknown_categories:
        lines.append("")
        lines.append("unknown detection categories (skipped): "
                     + ", ".join(f"{k} x{v}" for k, v in sorted(report.unknown_categories.items(), key=str)))
    return "\n".join(lines)
