"""COCO-style AP on a tiny hand-made example, then subgroup means from a table row.

Run:  python3 demos/evaluate_detections.py
"""
from dhskit.detect_eval import (SUNRGBD10, SUNRGBD16, SUNRGBD16_CATEGORIES, Box, Detection, GroundTruth,
                                average_precision, evaluate, format_tables, subgroup_means)

# one hit then one false alarm against two objects: the curve stops at recall 0.5
print("AP:", average_precision([True, False], [0.9, 0.8], n_gt=2))          # 51/101
print("AP (11 pt):", average_precision([True, False], [0.9, 0.8], 2, "voc11"))

gts = [
    GroundTruth("img1", "chair", Box(10, 10, 40, 60)),
    GroundTruth("img1", "table", Box(100, 50, 150, 90)),
    GroundTruth("img2", "chair", Box(5, 5, 30, 30)),
]
dets = [
    Detection("img1", "chair", Box(12, 11, 40, 58), 0.95),
    Detection("img1", "chair", Box(12, 11, 40, 58), 0.60),     # duplicate -> false positive
    Detection("img1", "table", Box(90, 60, 150, 90), 0.80),
    Detection("img2", "chair", Box(50, 50, 30, 30), 0.70),     # misplaced
]
report = evaluate(dets, gts, subgroups=[SUNRGBD16])
print(format_tables(report))

# subgroup means from a row of per-category AP50 values
row = [87.2, 87.7, 51.6, 69.5, 69.0, 27.0, 60.5, 48.1, 19.3, 38.3,
       68.1, 30.7, 61.2, 35.5, 41.9, 47.7]
vals = dict(zip(SUNRGBD16_CATEGORIES, row))
print("SUNRGBD10 %.2f   SUNRGBD16 %.2f" % (subgroup_means(vals, SUNRGBD10), subgroup_means(vals, SUNRGBD16)))
