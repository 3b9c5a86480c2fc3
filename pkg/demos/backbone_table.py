"""Block shapes, receptive fields and head widths for the two shipped backbones,
plus histogram / montage diagnostics on a random feature map.

Run:  python3 demos/backbone_table.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from dhskit.cli import default_grid, render_analysis
from dhskit.model_analysis import (FeatureTensor, analysis_table, conv_flops, feature_histogram, feature_montage,
                                   load_backbone, resized_input_shape, save_histogram_png, save_montage_png,
                                   sparsity_stats)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

for name in ("resnet50", "swin_t"):
    spec = load_backbone(name)
    entry = {"input_shape": spec.input_shape, "resized_shape": resized_input_shape(spec),
             "blocks": analysis_table(spec)}
    print(render_analysis(spec.name, entry))

# FLOPs grow with K^2: 1x1x1 image, one channel in and out
print([conv_flops(1, 1, 1, k, 1) for k in (1, 2, 3, 4)])
print("7x7 stem conv at block-1 resolution:", f"{conv_flops(200, 280, 3, 7, 96):,}")

# a ReLU-like map is sparse, a normalized one is dense
rng = np.random.default_rng(0)
relu = FeatureTensor(np.maximum(rng.normal(size=(25, 35, 2048)), 0) ** 2)
dense = FeatureTensor(rng.normal(size=(25, 35, 768)))
for tag, t, zoom in (("relu", relu, (0, 0.1)), ("dense", dense, (0.57, 0.7))):
    print(tag, "zero fraction %.3f" % sparsity_stats(t, 1e-6), "grid", default_grid(t.shape[2]))
    h = feature_histogram(t, zoom=zoom)
    save_histogram_png(h, out / f"{tag}_hist.png", f"{tag} zoom {zoom}")
    save_montage_png(feature_montage(t, default_grid(t.shape[2])), out / f"{tag}_montage.png")
print("wrote", out)
