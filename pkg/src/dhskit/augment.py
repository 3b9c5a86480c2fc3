"""Geometric augmentation of pseudo-images and their boxes.

Boxes are ``(x, y, w, h)`` in pixels. Every operation returns a new
:class:`LabeledImage` whose ``ops`` records what was applied, so a pipeline
run can be audited from its output alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .encode import PseudoImage

DEFAULT_HEIGHTS = tuple(range(480, 801, 32))


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    resize_target_width: int = 1333
    resize_target_heights: tuple[int, ...] = DEFAULT_HEIGHTS
    crop_h: int = 384
    crop_w: int = 600
    crop_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resize_target_heights", tuple(int(h) for h in self.resize_target_heights))
        for name in ("flip_prob", "crop_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        dims = (self.resize_target_width, self.crop_h, self.crop_w, *self.resize_target_heights)
        if not self.resize_target_heights or min(dims) <= 0:
            raise ValueError("policy sizes must be positive and at least one target height given")


@dataclass(frozen=True, eq=False)
class LabeledImage:
    image: PseudoImage
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    labels: tuple = ()
    ops: tuple[str, ...] = ()

    def __post_init__(self):
        b = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(b) != len(self.labels):
            raise ValueError(f"{len(b)} boxes but {len(self.labels)} labels")
        if np.any(b[:, 2:] < 0):
            raise ValueError("box width and height must be non-negative")
        object.__setattr__(self, "boxes", b)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height


def clip_boxes(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    x1 = np.clip(boxes[:, 0], 0, width)
    y1 = np.clip(boxes[:, 1], 0, height)
    x2 = np.clip(boxes[:, 0] + boxes[:, 2], 0, width)
    y2 = np.clip(boxes[:, 1] + boxes[:, 3], 0, height)
    return np.stack([x1, y1, x2 - x1, y2 - y1], axis=1)


def hflip(li: LabeledImage) -> LabeledImage:
    img = li.image
    flipped = PseudoImage(img.channels[:, ::-1], img.missing[:, ::-1], img.meta)
    boxes = li.boxes.copy()
    boxes[:, 0] = img.width - li.boxes[:, 0] - li.boxes[:, 2]
    return replace(li, image=flipped, boxes=boxes, ops=li.ops + ("hflip",))


def keep_ratio_size(width: int, height: int, target_w: int, target_h: int) -> tuple[int, int, float]:
    """Output (width, height, scale) when fitting inside the target box."""
    if target_w <= 0 or target_h <= 0:
        raise ValueError("resize targets must be positive")
    scale = min(target_w / width, target_h / height)
    return int(width * scale + 0.5), int(height * scale + 0.5), scale


def _resize_image(img: PseudoImage, new_w: int, new_h: int) -> PseudoImage:
    ch = cv2.resize(img.channels, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    miss = cv2.resize(img.missing.astype(np.uint8), (new_w, new_h), interpolation=cv2.INTER_NEAREST) > 0
    return PseudoImage(np.clip(ch, 0.0, 1.0), miss, img.meta)


def resize_keep_ratio(li: LabeledImage, target_w: int, target_h: int) -> LabeledImage:
    """Scale both axes by ``min(target_w / W, target_h / H)``.

    Channels are bilinear, the missing mask nearest-neighbour. Boxes use the
    exact scale factor and are clipped to the rounded output size.
    """
    new_w, new_h, scale = keep_ratio_size(li.width, li.height, target_w, target_h)
    op = f"resize({new_w}x{new_h})"
    if scale == 1.0:
        return replace(li, ops=li.ops + (op,))
    boxes = clip_boxes(li.boxes * scale, new_w, new_h)
    return replace(li, image=_resize_image(li.image, new_w, new_h), boxes=boxes, ops=li.ops + (op,))


def pad_to_divisor(li: LabeledImage, divisor: int = 32) -> LabeledImage:
    """Zero-pad right/bottom so both sides divide ``divisor``; padding counts as missing."""
    h, w = li.height, li.width
    ph, pw = -h % divisor, -w % divisor
    if ph == 0 and pw == 0:
        return li
    img = li.image
    ch = np.pad(img.channels, ((0, ph), (0, pw), (0, 0)))
    miss = np.pad(img.missing, ((0, ph), (0, pw)), constant_values=True)
    return replace(li, image=PseudoImage(ch, miss, img.meta), ops=li.ops + (f"pad({w + pw}x{h + ph})",))


def eval_transform(li: LabeledImage, width: int = 1120, height: int = 800, divisor: int = 32) -> LabeledImage:
    """Evaluation-time geometry: keep-ratio resize into ``width x height`` then pad."""
    return pad_to_divisor(resize_keep_ratio(li, width, height), divisor)


def random_crop(li: LabeledImage, crop_h: int = 384, crop_w: int = 600,
                rng: np.random.Generator | None = None) -> LabeledImage:
    """Uniformly placed crop window; boxes translated, clipped, and dropped if empty."""
    rng = np.random.default_rng() if rng is None else rng
    ch, cw = min(crop_h, li.height), min(crop_w, li.width)
    y0 = int(rng.integers(0, li.height - ch + 1))
    x0 = int(rng.integers(0, li.width - cw + 1))
    img = li.image
    cropped = PseudoImage(img.channels[y0:y0 + ch, x0:x0 + cw], img.missing[y0:y0 + ch, x0:x0 + cw], img.meta)
    boxes = li.boxes - np.array([x0, y0, 0.0, 0.0])
    boxes = clip_boxes(boxes, cw, ch)
    keep = (boxes[:, 2] > 0) & (boxes[:, 3] > 0)
    labels = tuple(lab for lab, k in zip(li.labels, keep) if k)
    return replace(li, image=cropped, boxes=boxes[keep], labels=labels,
                   ops=li.ops + (f"crop({x0},{y0},{cw},{ch})",))


def train_pipeline(li: LabeledImage, policy: AugmentPolicy,
                   rng: np.random.Generator | None = None) -> LabeledImage:
    """Flip, then either a multi-scale resize or a crop followed by one."""
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    if rng.random() < policy.flip_prob:
        li = hflip(li)
    if rng.random() < policy.crop_prob:
        li = random_crop(li, policy.crop_h, policy.crop_w, rng)
    target_h = int(rng.choice(policy.resize_target_heights))
    return resize_keep_ratio(li, policy.resize_target_width, target_h)


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for image ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([seed, index])
