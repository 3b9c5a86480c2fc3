"""Render one synthetic depth frame and turn it into a DHS pseudo-image.

Run:  python3 demos/encode_frame.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from dhskit.encode import assemble_dhs, denormalize, write_pseudo_image
from dhskit.ingest import GravityAlignment, back_project, decode_depth, encode_depth, gravity_align
from dhskit.synthetic import SUNRGBD_LIKE, Cuboid, render

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# a level camera 1.2 m above the floor looking at a table and a bin
scene = [Cuboid(-0.8, 2.6, (0.6, 0.5, 0.75)), Cuboid(0.9, 3.0, (0.4, 0.4, 0.35))]
depth, ids = render(scene)
print("depth frame", depth.values.shape, "missing %.1f%%" % (100 * depth.missing.mean()))

# round trip through the 16-bit PNG a sensor would give us (millimetres)
png = encode_depth(depth)
depth = decode_depth(png, scale=1000)

cloud = back_project(depth, SUNRGBD_LIKE)
cloud = gravity_align(cloud, GravityAlignment.camera_level())   # z is now up
print("valid points:", int(cloud.valid.sum()))

img = assemble_dhs(cloud)
for name, (lo, hi) in img.meta["ranges"].items():
    print(f"  {name:<13s} raw range [{lo:8.3f}, {hi:8.3f}]")

# height above the floor comes back in meters from the stored ranges
h = denormalize(img, "height")
for i, c in enumerate(scene):
    top = np.nanmax(h[ids == i])
    print(f"  {c.category:<12s} top at {top:.3f} m (true {c.size[2]:.3f} m)")

paths = write_pseudo_image(img, out / "frame.png")
print("wrote", ", ".join(str(p) for p in paths))
