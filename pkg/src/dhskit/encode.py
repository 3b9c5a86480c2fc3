"""DHS pseudo-image encoding: depth, height above floor, signed scanline angle."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .ingest import OrganizedPointCloud

CHANNELS = ("depth", "height", "signed_angle")
DEPTH_MODES = ("range", "optical_axis")


@dataclass(frozen=True, eq=False)
class ChannelImage:
    values: np.ndarray
    valid: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.valid, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise ValueError("values and valid mask must be matching 2-D arrays")
        v = np.where(m, v, 0.0)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"channel {self.name!r} has non-finite valid cells")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", m)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def value_range(self) -> tuple[float, float]:
        if not self.valid.any():
            raise ValueError(f"channel {self.name!r} has no valid cells")
        vals = self.values[self.valid]
        return float(vals.min()), float(vals.max())


@dataclass(frozen=True, eq=False)
class PseudoImage:
    """H x W x 3 image, channel order (D, H, S), every value in [0, 1].

    ``meta`` records how the image was produced (normalization ranges in raw
    units, encode options); it is what the PNG sidecar stores.
    """

    channels: np.ndarray
    missing: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.channels, dtype=np.float64)
        m = np.asarray(self.missing, dtype=bool)
        if c.ndim != 3 or c.shape[2] != 3 or m.shape != c.shape[:2]:
            raise ValueError(f"expected H x W x 3 channels with H x W mask, got {c.shape} / {m.shape}")
        if not np.all(np.isfinite(c)) or c.min(initial=0) < 0 or c.max(initial=0) > 1:
            raise ValueError("pseudo-image values must lie in [0, 1]")
        c = np.where(m[..., None], 0.0, c)
        object.__setattr__(self, "channels", c)
        object.__setattr__(self, "missing", m)

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]


def depth_channel(cloud: OrganizedPointCloud, mode: str = "range") -> ChannelImage:
    """Distance from the sensor: Euclidean range, or the sensor-frame z coordinate."""
    if mode == "range":
        d = np.linalg.norm(cloud.points, axis=-1)
    elif mode == "optical_axis":
        # sensor point s = R^T p, so s_z = p . R[:, 2]
        d = cloud.points @ cloud.rotation[:, 2]
    else:
        raise ValueError(f"depth mode must be one of {DEPTH_MODES}, got {mode!r}")
    return ChannelImage(d, cloud.valid, "depth")


def height_channel(cloud: OrganizedPointCloud, percentile: float = 1.0) -> ChannelImage:
    """Up-coordinate relative to the given percentile of valid heights (robust floor)."""
    if cloud.valid.sum() < 2:
        raise ValueError("degenerate cloud: fewer than 2 valid points")
    z = cloud.points[..., 2]
    floor = np.percentile(z[cloud.valid], percentile)
    return ChannelImage(z - floor, cloud.valid, "height")


def _sign(x):
    return np.where(x >= 0, 1.0, -1.0)


def signed_angle_channel(cloud: OrganizedPointCloud) -> ChannelImage:
    """Signed angle (degrees) of each scanline step with the up axis.

    Cell k holds sgn(D_k . D_{k-1}) * angle(D_k, z) with D_k = X_{k+1} - X_k.
    The first and last column and cells with an invalid neighbour are masked;
    so are zero-length steps, whose angle is undefined.
    """
    p, ok = cloud.points, cloud.valid
    h, w = ok.shape
    out = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    if w < 3:
        return ChannelImage(out, valid, "signed_angle")

    steps = np.diff(p, axis=1)                       # D_k for k = 0..w-2
    fwd, back = steps[:, 1:], steps[:, :-1]          # D_k, D_{k-1} for k = 1..w-2
    horiz = np.hypot(fwd[..., 0], fwd[..., 1])
    angle = np.degrees(np.arctan2(horiz, fwd[..., 2]))
    sign = _sign(np.einsum("ijk,ijk->ij", fwd, back))

    inner = ok[:, :-2] & ok[:, 1:-1] & ok[:, 2:] & ((horiz > 0) | (fwd[..., 2] != 0))
    out[:, 1:-1] = np.where(inner, sign * angle, 0.0)
    valid[:, 1:-1] = inner
    return ChannelImage(out, valid, "signed_angle")


def normalize(ch: ChannelImage, mask: np.ndarray | None = None) -> ChannelImage:
    """Min-max scale valid cells to [0, 1]; a constant channel maps to 0.

    ``mask`` optionally narrows the cells that define (and keep) the range.
    """
    valid = ch.valid if mask is None else ch.valid & mask
    if not valid.any():
        raise ValueError(f"cannot normalize channel {ch.name!r}: no valid cells")
    vals = ch.values[valid]
    lo, hi = vals.min(), vals.max()
    out = np.zeros_like(ch.values)
    if hi > lo:
        out[valid] = np.clip((vals - lo) / (hi - lo), 0.0, 1.0)
    return ChannelImage(out, valid, ch.name)


def assemble_dhs(cloud: OrganizedPointCloud, depth_mode: str = "range",
                 height_percentile: float = 1.0) -> PseudoImage:
    raw = [
        depth_channel(cloud, depth_mode),
        height_channel(cloud, height_percentile),
        signed_angle_channel(cloud),
    ]
    # A cell is kept only if all three channels are defined there; ranges are
    # taken over the kept cells so each channel spans exactly [0, 1].
    keep = raw[0].valid & raw[1].valid & raw[2].valid
    if not keep.any():
        raise ValueError("no cell has all three channels defined")
    norm = [normalize(c, keep) for c in raw]
    ranges = {c.name: list(ChannelImage(c.values, keep, c.name).value_range()) for c in raw}
    meta = {
        "channel_order": list(CHANNELS),
        "depth_mode": depth_mode,
        "height_percentile": float(height_percentile),
        "ranges": ranges,
        "missing_fraction": float(1.0 - keep.mean()),
    }
    return PseudoImage(np.stack([c.values for c in norm], axis=-1), ~keep, meta)


def denormalize(img: PseudoImage, channel: str) -> np.ndarray:
    """Raw channel values recovered from the stored ranges; NaN on missing cells."""
    idx = CHANNELS.index(channel)
    lo, hi = img.meta["ranges"][channel]
    out = img.channels[..., idx] * (hi - lo) + lo
    return np.where(img.missing, np.nan, out)


def quantize(values: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Round-half-up to the integer grid of the given depth."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    top = (1 << bit_depth) - 1
    q = np.floor(np.asarray(values) * top + 0.5)
    return np.clip(q, 0, top).astype(np.uint8 if bit_depth == 8 else np.uint16)


def _paths(path) -> tuple[Path, Path, Path]:
    path = Path(path)
    stem = path.with_suffix("")
    return path, Path(f"{stem}.json"), Path(f"{stem}.mask.png")


def write_pseudo_image(img: PseudoImage, path, bit_depth: int = 8) -> list[Path]:
    """Write the image (D->R, H->G, S->B), its missing mask and a JSON sidecar."""
    png, sidecar, mask_png = _paths(path)
    q = quantize(img.channels, bit_depth)
    if not cv2.imwrite(str(png), q[..., ::-1]):
        raise OSError(f"could not write {png}")
    if not cv2.imwrite(str(mask_png), img.missing.astype(np.uint8) * 255):
        raise OSError(f"could not write {mask_png}")
    meta = dict(img.meta, width=img.width, height=img.height, bit_depth=bit_depth)
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [png, sidecar, mask_png]


def read_pseudo_image(path) -> PseudoImage:
    png, sidecar, mask_png = _paths(path)
    raw = cv2.imread(str(png), cv2.IMREAD_UNCHANGED)
    if raw is None or raw.ndim != 3 or raw.shape[2] != 3:
        raise OSError(f"could not read a 3-channel image from {png}")
    top = float(np.iinfo(raw.dtype).max)
    channels = raw[..., ::-1].astype(np.float64) / top
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    if mask_png.exists():
        missing = cv2.imread(str(mask_png), cv2.IMREAD_UNCHANGED) > 0
    else:
        missing = ~channels.any(axis=-1)
    return PseudoImage(channels, missing, meta)
