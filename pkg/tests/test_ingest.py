import cv2
import numpy as np
import pytest

from dhskit.ingest import (CAMERA_LEVEL, CameraIntrinsics, DepthImage, GravityAlignment, OrganizedPointCloud,
                           back_project, decode_depth, encode_depth, gravity_align, load_intrinsics,
                           load_rotation, project, rotate_right16, save_rotation)

K = CameraIntrinsics(fx=518.857901, fy=519.469611, cx=364.5, cy=264.5)


def png16(raw):
    ok, buf = cv2.imencode(".png", np.asarray(raw, dtype=np.uint16))
    assert ok
    return buf.tobytes()


def test_decode_scale_and_missing():
    raw = np.array([[0, 1000], [2500, 65535]])
    d = decode_depth(png16(raw), scale=1000)
    np.testing.assert_array_equal(d.values, raw / 1000)
    np.testing.assert_array_equal(d.missing, [[True, False], [False, False]])


def test_bitshift_is_rotate_right_by_three():
    rng = np.random.default_rng(1)
    raw = rng.integers(0, 65536, size=(7, 9))
    got = rotate_right16(raw.astype(np.uint16))
    # bit-string oracle
    expect = np.array([[int(format(v, "016b")[-3:] + format(v, "016b")[:-3], 2) for v in row] for row in raw])
    np.testing.assert_array_equal(got, expect)
    d = decode_depth(png16(raw), scale=1, bitshift=True)
    np.testing.assert_array_equal(d.values, expect)


def test_decode_rejects_8bit_and_garbage():
    ok, buf = cv2.imencode(".png", np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError, match="16-bit"):
        decode_depth(buf.tobytes())
    with pytest.raises(ValueError, match="unreadable"):
        decode_depth(b"not a png")
    with pytest.raises(ValueError):
        decode_depth(png16(np.ones((2, 2))), scale=0)


def test_encode_decode_roundtrip():
    rng = np.random.default_rng(2)
    raw = rng.integers(0, 8000, size=(20, 30))
    d = decode_depth(png16(raw))
    assert np.array_equal(decode_depth(encode_depth(d)).values, d.values)


def test_back_project_matches_per_pixel_loop():
    rng = np.random.default_rng(3)
    z = rng.uniform(0.5, 5, size=(6, 8))
    z[2, 3] = 0
    cloud = back_project(DepthImage(z), K)
    for v in range(6):
        for u in range(8):
            if z[v, u] == 0:
                assert not cloud.valid[v, u]
                continue
            x = (u - K.cx) * z[v, u] / K.fx
            y = (v - K.cy) * z[v, u] / K.fy
            np.testing.assert_allclose(cloud.points[v, u], [x, y, z[v, u]], rtol=0, atol=1e-12)
    uv = project(cloud, K)
    v, u = np.mgrid[0:6, 0:8]
    np.testing.assert_allclose(uv[cloud.valid], np.stack([u, v], -1)[cloud.valid], atol=1e-9)
    assert np.isnan(uv[2, 3]).all()


def test_gravity_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        GravityAlignment(np.diag([1.0, 1.0, 1.001]))
    with pytest.raises(ValueError):
        GravityAlignment(np.diag([1.0, 1.0, -1.0]))   # reflection
    GravityAlignment(np.eye(3) + 1e-8)


def test_camera_level_puts_floor_down():
    # a level camera 1 m above the floor sees floor points at sensor y = +1
    pts = np.array([[[0.0, 1.0, 2.0], [0.5, 1.0, 3.0]]])
    cloud = gravity_align(OrganizedPointCloud(pts, np.ones((1, 2), bool)), GravityAlignment.camera_level())
    np.testing.assert_allclose(cloud.points[..., 2], -1.0)
    np.testing.assert_allclose(cloud.points[..., 1], [[2.0, 3.0]])
    np.testing.assert_array_equal(cloud.rotation, CAMERA_LEVEL)


def test_cloud_is_frozen():
    cloud = back_project(DepthImage(np.ones((2, 2))), K)
    with pytest.raises(ValueError):
        cloud.points[0, 0, 0] = 5


def test_load_rotation_sources(tmp_path):
    g = GravityAlignment.from_tilt(np.eye(3))
    np.testing.assert_array_equal(g.rotation, CAMERA_LEVEL)
    p = tmp_path / "r.json"
    save_rotation(p, g)
    np.testing.assert_array_equal(load_rotation(p).rotation, CAMERA_LEVEL)
    txt = tmp_path / "r.txt"
    np.savetxt(txt, CAMERA_LEVEL)
    np.testing.assert_array_equal(load_rotation(txt).rotation, CAMERA_LEVEL)
    assert np.array_equal(load_rotation("identity").rotation, np.eye(3))
    assert np.array_equal(load_rotation({"tilt": np.eye(3).tolist()}).rotation, CAMERA_LEVEL)


def test_load_intrinsics_sources(tmp_path):
    assert load_intrinsics({"fx": 1, "fy": 2, "cx": 3, "cy": 4}) == CameraIntrinsics(1, 2, 3, 4)
    assert load_intrinsics(K.matrix()) == K
    p = tmp_path / "k.txt"
    np.savetxt(p, K.matrix())
    got = load_intrinsics(p)
    assert abs(got.fx - K.fx) < 1e-9 and abs(got.cy - K.cy) < 1e-9
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 1, 0, 0)
