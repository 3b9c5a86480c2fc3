"""Ray-cast synthetic depth frames (floor + cuboids) with exact 2D ground truth.

Used by the demos and the end-to-end tests: the ground-truth boxes are the
pixel extents of each cuboid in the rendered frame, and
:func:`detect_raised_objects` recovers them from a pseudo-image's height channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .encode import PseudoImage, denormalize
from .ingest import CAMERA_LEVEL, CameraIntrinsics, DepthImage

SUNRGBD_LIKE = CameraIntrinsics(fx=518.857901, fy=519.469611, cx=364.5, cy=264.5)
LOW, TALL = "garbage_bin", "table"
SPLIT_HEIGHT = 0.55


@dataclass(frozen=True)
class Cuboid:
    """Axis-aligned box resting on the floor; x lateral, y forward (meters)."""
    x: float
    y: float
    size: tuple[float, float, float]

    @property
    def category(self) -> str:
        return TALL if self.size[2] >= SPLIT_HEIGHT else LOW


def _rays(k: CameraIntrinsics, width: int, height: int) -> np.ndarray:
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    return cam @ CAMERA_LEVEL.T       # world directions with unit optical-axis component


def render(cuboids, k: CameraIntrinsics = SUNRGBD_LIKE, width: int = 730, height: int = 530,
           camera_height: float = 1.2, max_range: float = 6.0):
    """Return (DepthImage, id map) where id is the hit cuboid index, -1 floor, -2 nothing."""
    d = _rays(k, width, height)
    origin = np.array([0.0, 0.0, camera_height])
    best = np.full((height, width), np.inf)
    ids = np.full((height, width), -2, dtype=int)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(d[..., 2] < 0, -camera_height / d[..., 2], np.inf)
    hit = t_floor < best
    best[hit], ids[hit] = t_floor[hit], -1

    for i, c in enumerate(cuboids):
        sx, sy, sz = c.size
        lo = np.array([c.x - sx / 2, c.y - sy / 2, 0.0]) - origin
        hi = np.array([c.x + sx / 2, c.y + sy / 2, sz]) - origin
        with np.errstate(divide="ignore", invalid="ignore"):
            t1, t2 = lo / d, hi / d
        t_near = np.nanmax(np.minimum(t1, t2), axis=-1)
        t_far = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (t_near <= t_far) & (t_near > 0) & (t_near < best)
        best[hit], ids[hit] = t_near[hit], i

    far = best > max_range
    ids[far] = -2
    depth = np.where(far | ~np.isfinite(best), 0.0, best)
    return DepthImage(depth), ids


def boxes_from_ids(ids: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-extent (x, y, w, h) box per cuboid index and a visibility flag."""
    boxes = np.zeros((n, 4))
    seen = np.zeros(n, dtype=bool)
    for i in range(n):
        rows, cols = np.nonzero(ids == i)
        if rows.size:
            seen[i] = True
            boxes[i] = cols.min(), rows.min(), cols.max() - cols.min() + 1, rows.max() - rows.min() + 1
    return boxes, seen


def random_scene(rng: np.random.Generator, max_objects: int = 3) -> list[Cuboid]:
    """1..max_objects cuboids in separate lateral lanes so their images never touch."""
    lanes = rng.permutation([-1.3, 0.0, 1.3])[: int(rng.integers(1, max_objects + 1))]
    out = []
    for x in lanes:
        tall = rng.random() < 0.5
        sz = rng.uniform(0.65, 0.9) if tall else rng.uniform(0.3, 0.45)
        size = (float(rng.uniform(0.4, 0.7)), float(rng.uniform(0.4, 0.7)), float(sz))
        out.append(Cuboid(float(x), float(rng.uniform(2.2, 3.4)), size))
    return out


def detect_raised_objects(img: PseudoImage, min_height: float = 0.05, min_area: int = 20,
                          split_height: float = SPLIT_HEIGHT) -> list[tuple[tuple, str, float]]:
    """Connected regions standing above the floor, as ((x, y, w, h), category, score).

    Category follows the region's 95th-percentile height; score is the
    fraction of the box covered by the region.
    """
    h = denormalize(img, "height")
    mask = np.nan_to_num(h, nan=-np.inf) > min_height
    n, labels, stats, _ = cv2.connectedComponentsWithStats(mask.astype(np.uint8), connectivity=8)
    out = []
    for j in range(1, n):
        x, y, w, hh, area = (int(v) for v in stats[j])
        if area < min_area:
            continue
        top = np.percentile(h[labels == j], 95)
        cat = TALL if top >= split_height else LOW
        out.append(((float(x), float(y), float(w), float(hh)), cat, round(area / (w * hh), 6)))
    return out


def write_dataset(root, n_frames: int, seed: int = 0, k: CameraIntrinsics = SUNRGBD_LIKE) -> dict:
    """Write ``n_frames`` rendered frames plus manifest, config and per-frame ground truth.

    Returns the paths written (``manifest``, ``config``, ``frames``).
    """
    import json
    from pathlib import Path

    from .ingest import encode_depth

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = []
    for i in range(n_frames):
        scene = random_scene(rng)
        depth, ids = render(scene, k)
        boxes, seen = boxes_from_ids(ids, len(scene))
        fid = f"frame{i:03d}"
        (root / f"{fid}.png").write_bytes(encode_depth(depth))
        gt = [{"category": c.category, "bbox": b.tolist()} for c, b, s in zip(scene, boxes, seen) if s]
        (root / f"{fid}_gt.jsonl").write_text("".join(json.dumps(r) + "\n" for r in gt))
        manifest.append({"frame_id": fid, "depth": f"{fid}.png", "intrinsics": "synthetic",
                         "rotation": "camera_level", "gt": f"{fid}_gt.jsonl"})
    (root / "frames.jsonl").write_text("".join(json.dumps(m) + "\n" for m in manifest))
    (root / "config.yaml").write_text(
        "manifest: frames.jsonl\n"
        "output_dir: out\n"
        "sensors:\n"
        f"  synthetic: {{fx: {k.fx}, fy: {k.fy}, cx: {k.cx}, cy: {k.cy}, scale: 1000}}\n"
        "eval:\n"
        "  subgroups: [SUNRGBD16]\n"
        f"seed: {seed}\n"
    )
    return {"manifest": root / "frames.jsonl", "config": root / "config.yaml",
            "frames": [m["frame_id"] for m in manifest]}
