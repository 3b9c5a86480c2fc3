"""Flip / crop / multi-scale resize on a labeled pseudo-image, with box bookkeeping.

Run:  python3 demos/augment_boxes.py
"""
import numpy as np

from dhskit.augment import (AugmentPolicy, LabeledImage, eval_transform, hflip, image_rng, keep_ratio_size,
                            train_pipeline)
from dhskit.encode import PseudoImage

H, W = 530, 730
rng = np.random.default_rng(0)
img = PseudoImage(rng.random((H, W, 3)), np.zeros((H, W), bool))
li = LabeledImage(img, [[0, 0, 10, 10], [300, 200, 120, 90]], ("bed", "chair"))

# horizontal flip mirrors x:  x' = W - x - w
print(hflip(li).boxes)

# the test-time resize for a 730 x 530 frame
new_w, new_h, s = keep_ratio_size(W, H, 1333, 800)
print("train-size fit: %dx%d, scale %.4f" % (new_w, new_h, s))
t = eval_transform(li)
print("eval input:", t.image.channels.shape, t.ops)

# a few training draws; each image index gets its own generator
policy = AugmentPolicy(seed=7)
for i in range(4):
    out = train_pipeline(li, policy, image_rng(policy.seed, i))
    print(i, out.ops, out.boxes.round(1).tolist())

# flip frequency settles near flip_prob
tiny = LabeledImage(PseudoImage(np.zeros((2, 2, 3)), np.zeros((2, 2), bool)))
fast = AugmentPolicy(crop_prob=0, resize_target_width=2, resize_target_heights=(2,))
flips = [("hflip" in train_pipeline(tiny, fast, image_rng(0, i)).ops) for i in range(5000)]
print("flip frequency:", np.mean(flips))
