"""
Dense heatmaps and their synthesis from anchors and contours.

Pixel (x, y) of a heatmap holds the value at the point (x, y) exactly, with
data stored row-major as ``data[y, x]`` in 32-bit floats. Reductions over
heatmaps are carried out in float64.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence, Tuple

import numpy as np

from .geometry import Point2, Polyline, distances_to_polyline

if TYPE_CHECKING:
    from .annotation import Annotation

Size = Tuple[int, int]  # (width, height)

ANCHOR_PREFIX = "anchor:"
CONTOUR_PREFIX = "contour:"


@dataclass(frozen=True)
class SigmaParam:
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be a finite value > 0, got {self.sigma}")

    def __float__(self) -> float:
        return float(self.sigma)


def as_sigma(sigma: SigmaParam | float) -> float:
    return float(sigma) if isinstance(sigma, SigmaParam) else float(SigmaParam(float(sigma)))


@dataclass(frozen=True, eq=False)
class Heatmap:
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"heatmap data must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("heatmap values must be finite")
        if arr is self.data:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, size: Size) -> "Heatmap":
        w, h = _check_size(size)
        return cls(np.zeros((h, w), dtype=np.float32))

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def size(self) -> Size:
        return (self.width, self.height)

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True, eq=False)
class HeatmapStack:
    channels: Tuple[Heatmap, ...]
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        channels = tuple(self.channels)
        names = tuple(self.names) if self.names else tuple(f"ch{i}" for i in range(len(channels)))
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "names", names)
        if len(names) != len(channels):
            raise ValueError(f"{len(channels)} channels but {len(names)} names")
        if len(set(names)) != len(names):
            raise ValueError(f"channel names must be unique: {names}")
        sizes = {c.size for c in channels}
        if len(sizes) > 1:
            raise ValueError(f"all channels must share one size, got {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.channels)

    def __getitem__(self, name: str) -> Heatmap:
        try:
            return self.channels[self.names.index(name)]
        except ValueError:
            raise KeyError(f"no channel named {name!r}") from None

    @property
    def size(self) -> Size:
        return self.channels[0].size if self.channels else (0, 0)

    def as_array(self) -> np.ndarray:
        w, h = self.size
        if not self.channels:
            return np.zeros((0, h, w), dtype=np.float32)
        return np.stack([c.data for c in self.channels])

    @classmethod
    def from_array(cls, arr: np.ndarray, names: Sequence[str]) -> "HeatmapStack":
        return cls(channels=tuple(Heatmap(a) for a in arr), names=tuple(names))


def as_grid(h: "Heatmap | np.ndarray") -> np.ndarray:
    """Float64 copy of a heatmap or 2D array."""
    if isinstance(h, Heatmap):
        return h.as_float64()
    arr = np.array(h, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D heatmap, got shape {arr.shape}")
    return arr


def _check_size(size: Size) -> Size:
    w, h = int(size[0]), int(size[1])
    if w < 1 or h < 1:
        raise ValueError(f"raster size must be at least 1x1, got {w}x{h}")
    return w, h


def _quadratic_falloff(dist_sq: np.ndarray, sigma: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - 2.0 * dist_sq / (sigma * sigma))


def synth_anchor_heatmap(a: Point2, sigma: SigmaParam | float, size: Size) -> Heatmap:
    s = as_sigma(sigma)
    w, h = _check_size(size)
    xs = np.arange(w, dtype=np.float64) - a.x
    ys = np.arange(h, dtype=np.float64) - a.y
    dist_sq = ys[:, None] ** 2 + xs[None, :] ** 2
    return Heatmap(_quadratic_falloff(dist_sq, s))


def synth_contour_heatmap(c: Polyline, sigma: SigmaParam | float, size: Size) -> Heatmap:
    """Heatmap of a contour; only pixels within sigma of the contour bounding box are evaluated."""
    if c is None or len(c.points) == 0:
        raise ValueError("cannot synthesize a heatmap from an empty polyline")
    s = as_sigma(sigma)
    w, h = _check_size(size)
    out = np.zeros((h, w), dtype=np.float64)

    pts = c.array
    reach = s / math.sqrt(2.0)
    x0 = max(0, int(math.floor(pts[:, 0].min() - reach)))
    x1 = min(w - 1, int(math.ceil(pts[:, 0].max() + reach)))
    y0 = max(0, int(math.floor(pts[:, 1].min() - reach)))
    y1 = min(h - 1, int(math.ceil(pts[:, 1].max() + reach)))
    if x0 > x1 or y0 > y1:
        return Heatmap(out)

    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    dist = distances_to_polyline(np.stack([xx, yy], axis=-1), c)
    out[y0:y1 + 1, x0:x1 + 1] = _quadratic_falloff(dist * dist, s)
    return Heatmap(out)


def bilinear_weights(
    shape: Tuple[int, int], xs: np.ndarray, ys: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Corner indices (x0, y0, x1, y1) and fractional weights (fx, fy) for bilinear sampling."""
    h, w = shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    return x0, y0, x1, y1, fx, fy


def bilinear_array(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1, fx, fy = bilinear_weights(grid.shape, xs, ys)
    g = np.asarray(grid, dtype=np.float64)
    top = g[y0, x0] * (1.0 - fx) + g[y0, x1] * fx
    bottom = g[y1, x0] * (1.0 - fx) + g[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def bilinear_scatter(
    shape: Tuple[int, int], xs: np.ndarray, ys: np.ndarray, values: np.ndarray
) -> np.ndarray:
    """Adjoint of bilinear_array: spread values onto the four corner pixels."""
    out = np.zeros(shape, dtype=np.float64)
    x0, y0, x1, y1, fx, fy = bilinear_weights(shape, xs, ys)
    v = np.asarray(values, dtype=np.float64)
    np.add.at(out, (y0, x0), v * (1.0 - fx) * (1.0 - fy))
    np.add.at(out, (y0, x1), v * fx * (1.0 - fy))
    np.add.at(out, (y1, x0), v * (1.0 - fx) * fy)
    np.add.at(out, (y1, x1), v * fx * fy)
    return out


def bilinear_sample(h: Heatmap, p: Point2) -> float:
    if not (0.0 <= p.x <= h.width - 1 and 0.0 <= p.y <= h.height - 1):
        raise ValueError(f"sample point ({p.x}, {p.y}) outside [0, {h.width - 1}]x[0, {h.height - 1}]")
    return float(bilinear_array(h.data, np.array([p.x]), np.array([p.y]))[0])


def channel_name(role: str, name: str) -> str:
    return f"{ANCHOR_PREFIX if role == 'anchor' else CONTOUR_PREFIX}{name}"


def split_channel_name(channel: str) -> Tuple[str, str]:
    """Return (role, name) for an ``anchor:``/``contour:`` channel label."""
    for prefix, role in ((ANCHOR_PREFIX, "anchor"), (CONTOUR_PREFIX, "contour")):
        if channel.startswith(prefix):
            return role, channel[len(prefix):]
    raise ValueError(f"channel {channel!r} has no anchor:/contour: prefix")


def synth_stack(annotation: "Annotation", sigma: SigmaParam | float, threads: int = 1) -> HeatmapStack:
    """Ground-truth stack: anchors then contours, each in annotation order."""
    s = as_sigma(sigma)
    size = annotation.image_size
    jobs = [("anchor", a.name, a) for a in annotation.anchors]
    jobs += [("contour", c.name, c) for c in annotation.contours]

    def run(job) -> Heatmap:
        role, _, item = job
        if role == "anchor":
            return synth_anchor_heatmap(item.point, s, size)
        return synth_contour_heatmap(item.polyline, s, size)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        channels = list(pool.map(run, jobs))
    names = [channel_name(role, name) for role, name, _ in jobs]
    return HeatmapStack(channels=tuple(channels), names=tuple(names))


def stack_max(channels: Iterable[Heatmap], size: Size) -> np.ndarray:
    w, h = size
    out = np.zeros((h, w), dtype=np.float64)
    for c in channels:
        np.maximum(out, c.data, out=out)
    return out
