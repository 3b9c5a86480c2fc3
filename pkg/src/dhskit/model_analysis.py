"""Backbone shape / receptive-field / FLOPs arithmetic and feature-map diagnostics."""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .augment import keep_ratio_size

PRESETS = {"resnet50": "resnet50.yaml", "swin_t": "swin_t.yaml"}
KINDS = ("conv", "window_attention")


def _pair(k) -> tuple[int, int]:
    if isinstance(k, (list, tuple)):
        kh, kw = k
        return int(kh), int(kw)
    return int(k), int(k)


@dataclass(frozen=True)
class BlockSpec:
    name: str
    stride: int                      # cumulative w.r.t. the network input
    kernel: tuple[int, int]          # conv kernel, or attention window in tokens
    channels: int
    heads: int = 1
    patch_size: int | None = None    # set on the first windowed-attention block
    layers: tuple = ()               # (kernel, stride) chain for the cumulative field

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "layers", tuple((int(k), int(s)) for k, s in self.layers))
        if self.channels <= 0 or self.heads < 1 or self.stride < 1:
            raise ValueError(f"{self.name}: channels > 0, heads >= 1 and stride >= 1 required")


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    blocks: tuple[BlockSpec, ...]
    kind: str = "conv"
    input_shape: tuple[int, int, int] = (530, 730, 3)
    resize: dict = field(default_factory=lambda: {"width": 1120, "height": 800, "divisor": 32})

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        strides = [b.stride for b in self.blocks]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"{self.name}: block strides must strictly increase, got {strides}")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))

    @classmethod
    def from_dict(cls, doc: dict) -> "BackboneSpec":
        known = {"name", "kind", "input_shape", "resize", "blocks"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown backbone keys {sorted(extra)}")
        blocks = tuple(BlockSpec(**b) for b in doc["blocks"])
        kw = {k: doc[k] for k in ("kind", "input_shape", "resize") if k in doc}
        return cls(doc["name"], blocks, **kw)


def load_backbone(name_or_path) -> BackboneSpec:
    """Load a shipped preset (``resnet50``, ``swin_t``) or a YAML/JSON spec file."""
    if str(name_or_path) in PRESETS:
        text = resources.files("dhskit").joinpath("presets", PRESETS[str(name_or_path)]).read_text()
    else:
        text = Path(name_or_path).read_text()
    return BackboneSpec.from_dict(yaml.safe_load(text))


def resized_input_shape(spec: BackboneSpec, hw: tuple[int, int] | None = None) -> tuple[int, int, int]:
    """Shape fed to the backbone: keep-ratio resize into the test size, then pad to the divisor."""
    h, w = hw if hw is not None else spec.input_shape[:2]
    r = spec.resize
    new_w, new_h, _ = keep_ratio_size(w, h, r["width"], r["height"])
    d = r.get("divisor", 1)
    return (-(-new_h // d) * d, -(-new_w // d) * d, spec.input_shape[2])


def block_shapes(spec: BackboneSpec, input_hw: tuple[int, int] | None = None) -> list[tuple[int, int, int]]:
    h, w = input_hw if input_hw is not None else resized_input_shape(spec)[:2]
    return [(-(-h // b.stride), -(-w // b.stride), b.channels) for b in spec.blocks]


def local_receptive_field(spec: BackboneSpec, block_index: int) -> tuple[int, int]:
    """Kernel of a conv block; attention window for windowed blocks, in pixels where a patch size is set."""
    b = spec.blocks[block_index]
    if spec.kind == "window_attention" and b.patch_size:
        return b.kernel[0] * b.patch_size, b.kernel[1] * b.patch_size
    return b.kernel


def receptive_field(layers, start: tuple[int, int] = (1, 1)) -> tuple[int, int]:
    """Fold ``r <- r + (k - 1) * j``, ``j <- j * s`` over (kernel, stride) layers."""
    r, j = start
    for k, s in layers:
        r += (k - 1) * j
        j *= s
    return r, j


def cumulative_receptive_field(spec: BackboneSpec) -> list[tuple[int, int]]:
    """Input-pixel receptive field after each block, chaining the per-block layer lists."""
    out = []
    state = (1, 1)
    for b in spec.blocks:
        if not b.layers:
            raise ValueError(f"{spec.name}/{b.name}: no layer chain to compute a cumulative field")
        state = receptive_field(b.layers, state)
        out.append((state[0], state[0]))
    return out


def conv_flops(H: int, W: int, C_in: int, K: int, C_out: int) -> int:
    """2 * H * W * (C_in * K^2 + 1) * C_out, in exact integer arithmetic."""
    for name, v in (("H", H), ("W", W), ("C_in", C_in), ("K", K), ("C_out", C_out)):
        if isinstance(v, bool) or int(v) != v or v <= 0:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    H, W, C_in, K, C_out = (int(v) for v in (H, W, C_in, K, C_out))
    return 2 * H * W * (C_in * K * K + 1) * C_out


def head_dim_table(spec: BackboneSpec) -> list[dict]:
    return [{"block": b.name, "dim": b.channels, "heads": b.heads, "head_dim": b.heads * b.channels}
            for b in spec.blocks]


def analysis_table(spec: BackboneSpec, input_hw: tuple[int, int] | None = None) -> list[dict]:
    """One row per block: shape, local and cumulative fields, widths, and the
    FLOPs of a single square conv of the block's local size at its resolution.
    """
    shapes = block_shapes(spec, input_hw)
    cumulative = cumulative_receptive_field(spec) if all(b.layers for b in spec.blocks) else [None] * len(shapes)
    rows = []
    for i, (b, shape, heads) in enumerate(zip(spec.blocks, shapes, head_dim_table(spec))):
        rows.append({
            "block": b.name,
            "shape": list(shape),
            "local_rf": list(local_receptive_field(spec, i)),
            "cumulative_rf": None if cumulative[i] is None else list(cumulative[i]),
            "channels": b.channels,
            "heads": heads["heads"],
            "head_dim": heads["head_dim"],
            "local_conv_flops": conv_flops(shape[0], shape[1], b.channels, b.kernel[0], b.channels),
        })
    return rows


# ------------------------------------------------------------ feature tensors

@dataclass(frozen=True, eq=False)
class FeatureTensor:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 4 and v.shape[0] == 1:
            v = v[0]
        if v.ndim != 3 or v.size == 0:
            raise ValueError(f"feature tensor must be a non-empty H x W x C array, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature tensor holds non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


# Binary dump: b"DHSF", version, dtype code, ndim, layout (0 = HWC, 1 = CHW),
# ndim little-endian uint32 dims, then little-endian C-order data.
MAGIC = b"DHSF"
_DTYPES = {1: "<f2", 2: "<f4", 3: "<f8"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


def write_feature_tensor(path, values: np.ndarray, layout: str = "hwc") -> None:
    v = np.ascontiguousarray(values)
    code = _CODES.get(v.dtype.newbyteorder("<").str)
    if code is None:
        v, code = v.astype("<f4"), 2
    header = MAGIC + struct.pack("<BBBB", 1, code, v.ndim, 0 if layout == "hwc" else 1)
    header += struct.pack(f"<{v.ndim}I", *v.shape)
    Path(path).write_bytes(header + v.astype(_DTYPES[code]).tobytes())


def read_feature_tensor(path) -> FeatureTensor:
    """Read a ``.npy`` array or the small-header binary dump."""
    path = Path(path)
    if path.suffix == ".npy":
        return FeatureTensor(np.load(path))
    data = path.read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise ValueError(f"{path}: not a feature tensor dump (bad magic)")
    version, code, ndim, layout = struct.unpack_from("<BBBB", data, 4)
    if version != 1 or code not in _DTYPES or not 1 <= ndim <= 4 or layout not in (0, 1):
        raise ValueError(f"{path}: malformed header (version={version}, dtype={code}, ndim={ndim}, layout={layout})")
    if len(data) < 8 + 4 * ndim:
        raise ValueError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    offset = 8 + 4 * ndim
    dtype = np.dtype(_DTYPES[code])
    expected = math.prod(shape) * dtype.itemsize
    if len(data) - offset != expected:
        raise ValueError(f"{path}: payload is {len(data) - offset} bytes, header implies {expected}")
    v = np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).astype(np.float64)
    if layout == 1:
        v = np.moveaxis(v, -3, -1)
    return FeatureTensor(v)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    value_min: float                 # raw min/max used for the [0, 1] normalization
    value_max: float
    zoom: tuple[float, float] | None = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def normalize_global(t: FeatureTensor) -> np.ndarray:
    v = t.values.astype(np.float64)
    lo, hi = v.min(), v.max()
    return np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)


def feature_histogram(t: FeatureTensor, zoom: tuple[float, float] | None = None,
                      bins: int = 100) -> Histogram:
    """Histogram of the whole tensor min-max scaled to [0, 1], optionally restricted to ``zoom``."""
    v = t.values
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        warnings.warn("constant feature tensor; histogram collapses to one bin", RuntimeWarning, stacklevel=2)
        return Histogram(np.array([0.0, 1.0]), np.array([v.size]), lo, hi, zoom)
    x = normalize_global(t).ravel()
    span = (0.0, 1.0)
    if zoom is not None:
        span = (float(zoom[0]), float(zoom[1]))
        if not span[0] < span[1]:
            raise ValueError(f"zoom must be an increasing pair, got {zoom}")
        x = x[(x >= span[0]) & (x <= span[1])]
    counts, edges = np.histogram(x, bins=bins, range=span)
    return Histogram(edges, counts, lo, hi, None if zoom is None else span)


def feature_montage(t: FeatureTensor, grid: tuple[int, int]) -> np.ndarray:
    """Tile every channel, each min-max scaled on its own, row-major into ``rows x cols`` cells."""
    rows, cols = grid
    h, w, c = t.shape
    if rows * cols < c:
        raise ValueError(f"grid {rows}x{cols} holds {rows * cols} tiles, tensor has {c} channels")
    v = t.values.astype(np.float64)
    lo = v.min(axis=(0, 1))
    span = v.max(axis=(0, 1)) - lo
    tiles = np.where(span > 0, (v - lo) / np.where(span > 0, span, 1), 0.0)
    out = np.zeros((rows * h, cols * w))
    for ch in range(c):
        r, q = divmod(ch, cols)
        out[r * h:(r + 1) * h, q * w:(q + 1) * w] = tiles[..., ch]
    return out


def sparsity_stats(t: FeatureTensor, eps: float = 0.0) -> float:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    return float(np.count_nonzero(np.abs(t.values) <= eps) / t.values.size)


def save_montage_png(image: np.ndarray, path) -> None:
    import cv2

    if not cv2.imwrite(str(path), np.floor(np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)):
        raise OSError(f"could not write {path}")


def save_histogram_png(hist: Histogram, path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(hist.edges[:-1], hist.counts, width=np.diff(hist.edges), align="edge")
    ax.set_xlabel("normalized activation")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
