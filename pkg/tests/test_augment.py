import numpy as np
import pytest

from dhskit.augment import (AugmentPolicy, LabeledImage, clip_boxes, eval_transform, hflip, image_rng,
                            keep_ratio_size, random_crop, resize_keep_ratio, train_pipeline)
from dhskit.encode import PseudoImage


def labeled(rng, h=53, w=73, n=4):
    img = PseudoImage(rng.random((h, w, 3)), rng.random((h, w)) < 0.1)
    x = rng.integers(0, w - 5, n)
    y = rng.integers(0, h - 5, n)
    bw = rng.integers(1, w - x + 1)
    bh = rng.integers(1, h - y + 1)
    boxes = np.stack([x, y, bw, bh], 1).astype(float)
    return LabeledImage(img, boxes, tuple(f"c{i}" for i in range(n)))


def test_hflip_box_example():
    img = PseudoImage(np.zeros((530, 730, 3)), np.zeros((530, 730), bool))
    out = hflip(LabeledImage(img, [[0, 0, 10, 10]], ("bed",)))
    assert out.boxes.tolist() == [[720.0, 0.0, 10.0, 10.0]]


def test_hflip_involution():
    rng = np.random.default_rng(0)
    for _ in range(20):
        li = labeled(rng)
        back = hflip(hflip(li))
        assert np.array_equal(back.image.channels, li.image.channels)
        assert np.array_equal(back.image.missing, li.image.missing)
        assert np.array_equal(back.boxes, li.boxes)


def test_hflip_moves_pixels():
    rng = np.random.default_rng(1)
    li = labeled(rng)
    out = hflip(li)
    np.testing.assert_array_equal(out.image.channels[:, 0], li.image.channels[:, -1])


def test_keep_ratio_scale_for_sensor_frame():
    w, h, s = keep_ratio_size(730, 530, 1333, 800)
    assert s == pytest.approx(800 / 530)
    assert (w, h) == (1102, 800)
    assert round(s, 3) == 1.509


def test_resize_scales_boxes_and_area():
    rng = np.random.default_rng(2)
    li = labeled(rng, 40, 60)
    out = resize_keep_ratio(li, 120, 100)
    s = min(120 / 60, 100 / 40)
    np.testing.assert_allclose(out.boxes, clip_boxes(li.boxes * s, out.width, out.height))
    area_in = li.boxes[:, 2] * li.boxes[:, 3]
    area_out = out.boxes[:, 2] * out.boxes[:, 3]
    np.testing.assert_allclose(area_out, area_in * s * s)
    assert (out.height, out.width) == (80, 120)


def test_resize_channels_stay_in_unit_range():
    rng = np.random.default_rng(3)
    out = resize_keep_ratio(labeled(rng), 300, 200)
    assert out.image.channels.min() >= 0 and out.image.channels.max() <= 1


def test_eval_transform_pads_to_divisor():
    img = PseudoImage(np.zeros((530, 730, 3)), np.zeros((530, 730), bool))
    out = eval_transform(LabeledImage(img))
    assert (out.height, out.width) == (800, 1120)
    assert out.image.missing[:, 1102:].all() and not out.image.missing[:, :1102].any()


def test_random_crop_boxes_inside():
    rng = np.random.default_rng(4)
    for _ in range(50):
        li = labeled(rng, 100, 150, 6)
        out = random_crop(li, 40, 60, rng)
        assert (out.height, out.width) == (40, 60)
        b = out.boxes
        assert np.all(b[:, 0] >= 0) and np.all(b[:, 0] + b[:, 2] <= 60)
        assert np.all(b[:, 1] >= 0) and np.all(b[:, 1] + b[:, 3] <= 40)
        assert np.all((b[:, 2] > 0) & (b[:, 3] > 0))
        assert len(out.labels) == len(b)


def test_crop_drops_boxes_outside():
    img = PseudoImage(np.zeros((10, 10, 3)), np.zeros((10, 10), bool))
    li = LabeledImage(img, [[0, 0, 2, 2], [8, 8, 2, 2]], ("a", "b"))

    class Fixed:
        def integers(self, lo, hi):
            return 0
    out = random_crop(li, 5, 5, Fixed())
    assert out.labels == ("a",)


def test_pipeline_deterministic():
    rng = np.random.default_rng(5)
    li = labeled(rng, 120, 160)
    policy = AugmentPolicy(resize_target_width=200, resize_target_heights=(96, 128), crop_h=60, crop_w=80)
    for i in range(10):
        a = train_pipeline(li, policy, image_rng(3, i))
        b = train_pipeline(li, policy, image_rng(3, i))
        assert a.ops == b.ops
        assert np.array_equal(a.image.channels, b.image.channels)
        assert np.array_equal(a.boxes, b.boxes)


def test_pipeline_output_heights():
    rng = np.random.default_rng(6)
    li = labeled(rng, 53, 73)
    policy = AugmentPolicy(crop_prob=0.0)
    for i in range(20):
        out = train_pipeline(li, policy, image_rng(0, i))
        assert out.height in policy.resize_target_heights or out.width == 1333


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(flip_prob=1.5)
    with pytest.raises(ValueError):
        AugmentPolicy(resize_target_heights=())
