"""Independent reference implementations used by the tests.

Written from the metric definitions with plain loops; they share no code
with the package beyond the record types.
"""
import math


def grid_iou(a, b):
    """IoU by counting unit cells of integer boxes (x, y, w, h)."""
    ca = {(i, j) for i in range(a[0], a[0] + a[2]) for j in range(a[1], a[1] + a[3])}
    cb = {(i, j) for i in range(b[0], b[0] + b[2]) for j in range(b[1], b[1] + b[3])}
    union = len(ca | cb)
    return len(ca & cb) / union if union else 0.0


def box_iou(a, b):
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    iw = max(0, min(ax2, bx2) - max(a[0], b[0]))
    ih = max(0, min(ay2, by2) - max(a[1], b[1]))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def interpolated_ap(flags, n_gt, points=101):
    """flags: TP booleans in ranked order. Mean over the recall grid of the best
    precision reached at or beyond each recall level."""
    if n_gt == 0:
        return None
    pr = []
    tp = fp = 0
    for f in flags:
        tp += f
        fp += not f
        pr.append((tp / n_gt, tp / (tp + fp)))
    step = points - 1
    total = 0.0
    for i in range(points):
        r = i / step
        best = [p for rec, p in pr if rec >= r]
        total += max(best) if best else 0.0
    return total / points


def in_range(area, rng):
    lo, hi, lo_closed, hi_closed = rng
    return (area >= lo if lo_closed else area > lo) and (area <= hi if hi_closed else area < hi)


AREAS = {
    "all": (0, math.inf, True, True),
    "small": (0, 1024, True, False),
    "medium": (1024, 9216, True, True),
    "large": (9216, math.inf, False, True),
}


def brute_force_ap(dets, gts, category, thr, area="all", max_dets=100, points=101):
    """dets: list of (image, category, box, score); gts: list of (image, category, box)."""
    rng = AREAS[area]
    images = sorted({d[0] for d in dets} | {g[0] for g in gts}, key=str)
    ranked = []
    n_gt = 0
    for img in images:
        g = [x[2] for x in gts if x[0] == img and x[1] == category]
        g_ign = [not in_range(b[2] * b[3], rng) for b in g]
        n_gt += g_ign.count(False)
        d = [(i, x) for i, x in enumerate(dets) if x[0] == img and x[1] == category]
        d.sort(key=lambda p: (-p[1][3], p[0]))
        d = d[:max_dets]
        taken = [False] * len(g)
        for i, x in d:
            pick = None
            for j, gb in enumerate(g):
                if taken[j] or box_iou(x[2], gb) < thr:
                    continue
                v = box_iou(x[2], gb)
                if pick is None:
                    pick = j
                    continue
                pv = box_iou(x[2], g[pick])
                if g_ign[pick] and not g_ign[j]:
                    pick = j
                elif g_ign[pick] == g_ign[j] and v > pv:
                    pick = j
            if pick is not None:
                taken[pick] = True
                if not g_ign[pick]:
                    ranked.append((x[3], i, True))
            elif in_range(x[2][2] * x[2][3], rng):
                ranked.append((x[3], i, False))
    ranked.sort(key=lambda r: (-r[0], r[1]))
    return interpolated_ap([r[2] for r in ranked], n_gt, points)


def random_instance(rng, n_images=5, n_boxes=10, n_cats=3, span=220, max_side=150):
    """Random detections/GT with plenty of overlap and repeated scores."""
    cats = [f"c{i}" for i in range(int(rng.integers(1, n_cats + 1)))]
    imgs = [f"im{i}" for i in range(int(rng.integers(1, n_images + 1)))]

    def box():
        return (int(rng.integers(0, span)), int(rng.integers(0, span)),
                int(rng.integers(1, max_side)), int(rng.integers(1, max_side)))

    gts = [(imgs[int(rng.integers(len(imgs)))], cats[int(rng.integers(len(cats)))], box())
           for _ in range(int(rng.integers(0, n_boxes + 1)))]
    dets = []
    for _ in range(int(rng.integers(0, n_boxes + 1))):
        if gts and rng.random() < 0.6:
            im, c, (x, y, w, h) = gts[int(rng.integers(len(gts)))]
            j = lambda: int(rng.integers(-8, 9))
            b = (x + j(), y + j(), max(1, w + j()), max(1, h + j()))
            if rng.random() < 0.2:
                c = cats[int(rng.integers(len(cats)))]
        else:
            im, c, b = imgs[int(rng.integers(len(imgs)))], cats[int(rng.integers(len(cats)))], box()
        dets.append((im, c, b, float(rng.integers(1, 8)) / 8))
    return dets, gts, cats
