"""Depth decoding, pinhole back-projection and gravity alignment.

Images are indexed ``[row, col]``; a row is one scanline of the organized
cloud. Pixel ``(u, v)`` means column ``u``, row ``v``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import yaml

ORTHO_TOL = 1e-6

# Sensor frame (x right, y down, z forward) -> upright frame (x right, y forward, z up)
# for a camera whose optical axis is horizontal.
CAMERA_LEVEL = np.array([[1.0, 0.0, 0.0],
                         [0.0, 0.0, 1.0],
                         [0.0, -1.0, 0.0]])


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float).reshape(3, 3)
        return cls(fx=K[0, 0], fy=K[1, 1], cx=K[0, 2], cy=K[1, 2])

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class GravityAlignment:
    """Rotation taking sensor-frame points to a frame whose z axis points up."""

    rotation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise ValueError("rotation must be a finite 3x3 matrix")
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", _frozen(R))

    @classmethod
    def identity(cls) -> "GravityAlignment":
        return cls(np.eye(3))

    @classmethod
    def camera_level(cls) -> "GravityAlignment":
        return cls(CAMERA_LEVEL)

    @classmethod
    def from_tilt(cls, tilt) -> "GravityAlignment":
        """Compose a SUN RGB-D style ``Rtilt`` (upright <- level camera) with the axis swap."""
        return cls(np.asarray(tilt, dtype=float).reshape(3, 3) @ CAMERA_LEVEL)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Depth in meters; 0 marks a missing measurement."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("depth values must be finite and non-negative")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return self.values == 0


@dataclass(frozen=True, eq=False)
class OrganizedPointCloud:
    """H x W grid of points with a validity mask.

    ``rotation`` is the accumulated sensor -> current frame rotation, kept so
    that sensor-frame quantities (optical-axis depth) stay recoverable after
    alignment. Invalid cells hold zeros and must not be read.
    """

    points: np.ndarray
    valid: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        m = np.asarray(self.valid, dtype=bool)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"points must be H x W x 3, got {p.shape}")
        if m.shape != p.shape[:2]:
            raise ValueError("valid mask shape does not match the point grid")
        if not np.all(np.isfinite(p[m])):
            raise ValueError("valid points must be finite")
        p = np.where(m[..., None], p, 0.0)
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "valid", _frozen(m))
        object.__setattr__(self, "rotation", _frozen(self.rotation, np.float64))

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


def rotate_right16(raw: np.ndarray, bits: int = 3) -> np.ndarray:
    raw = raw.astype(np.uint32)
    return (((raw >> bits) | (raw << (16 - bits))) & 0xFFFF).astype(np.uint16)


def decode_depth(data: bytes, scale: float = 1000.0, bitshift: bool = False) -> DepthImage:
    """Decode a 16-bit single-channel image (PNG bytes) into meters.

    With ``bitshift`` the raw word is rotated right by 3 bits first, as in the
    SUN RGB-D release.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    buf = np.frombuffer(data, dtype=np.uint8)
    raw = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED) if buf.size else None
    if raw is None:
        raise ValueError("unreadable depth image")
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise ValueError(f"expected a 16-bit single-channel image, got {raw.dtype} with shape {raw.shape}")
    if bitshift:
        raw = rotate_right16(raw)
    return DepthImage(raw.astype(np.float64) / scale)


def read_depth(path, scale: float = 1000.0, bitshift: bool = False) -> DepthImage:
    return decode_depth(Path(path).read_bytes(), scale=scale, bitshift=bitshift)


def encode_depth(depth: DepthImage, scale: float = 1000.0) -> bytes:
    """Inverse of :func:`decode_depth` (no bit rotation); values are rounded to depth units."""
    raw = np.floor(depth.values * scale + 0.5)
    if raw.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this scale")
    ok, buf = cv2.imencode(".png", raw.astype(np.uint16))
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def back_project(depth: DepthImage, k: CameraIntrinsics) -> OrganizedPointCloud:
    h, w = depth.values.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    z = depth.values
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    return OrganizedPointCloud(np.stack([x, y, z], axis=-1), z > 0)


def project(cloud: OrganizedPointCloud, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of sensor-frame points to (u, v); invalid cells give NaN."""
    p = cloud.points
    with np.errstate(divide="ignore", invalid="ignore"):
        u = p[..., 0] * k.fx / p[..., 2] + k.cx
        v = p[..., 1] * k.fy / p[..., 2] + k.cy
    uv = np.stack([u, v], axis=-1)
    uv[~cloud.valid] = np.nan
    return uv


def gravity_align(cloud: OrganizedPointCloud, g: GravityAlignment) -> OrganizedPointCloud:
    R = g.rotation
    return OrganizedPointCloud(cloud.points @ R.T, cloud.valid, R @ cloud.rotation)


def load_intrinsics(source) -> CameraIntrinsics:
    """Accept a mapping with fx/fy/cx/cy, a 3x3 matrix, or a text/YAML file holding either."""
    if isinstance(source, CameraIntrinsics):
        return source
    if isinstance(source, (str, Path)):
        path = Path(source)
        text = path.read_text()
        try:
            source = yaml.safe_load(text)
        except yaml.YAMLError:
            source = None
        if not isinstance(source, (dict, list)):
            source = np.loadtxt(path)
    if isinstance(source, dict):
        return CameraIntrinsics(*(float(source[key]) for key in ("fx", "fy", "cx", "cy")))
    return CameraIntrinsics.from_matrix(source)


def load_rotation(source) -> GravityAlignment:
    """Accept "identity", "camera_level", a 3x3 nested list, or a file holding a 3x3 matrix.

    Mappings of the form ``{"tilt": [[...]]}`` are composed with the level-camera
    axis swap (SUN RGB-D ``Rtilt`` convention).
    """
    if isinstance(source, GravityAlignment):
        return source
    if isinstance(source, str) and source in ("identity", "camera_level"):
        return getattr(GravityAlignment, source)()
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix in (".json", ".yaml", ".yml"):
            source = yaml.safe_load(path.read_text())
        else:
            source = np.loadtxt(path)
    if isinstance(source, dict):
        if "tilt" in source:
            return GravityAlignment.from_tilt(source["tilt"])
        source = source["rotation"]
    return GravityAlignment(np.asarray(source, dtype=float).reshape(3, 3))


def save_rotation(path, g: GravityAlignment) -> None:
    Path(path).write_text(json.dumps({"rotation": g.rotation.tolist()}))
