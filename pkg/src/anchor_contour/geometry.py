"""
Sub-pixel 2D geometry for anchors and contours.

Coordinates are pixels, x to the right and y down, with integer values at pixel
centers. Contours are polylines; closed polylines connect the last point back
to the first without storing the endpoint twice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.interpolate import make_interp_spline

# arclength tolerance for "this sample sits on a vertex"
_VERTEX_TOL = 1e-9
# keeps the (points x segments x 2) work array of distance queries bounded
_DISTANCE_BLOCK = 4_000_000

Normal = Tuple[float, float]


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point2 coordinates must be finite, got ({self.x}, {self.y})")

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Segment:
    a: Point2
    b: Point2

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError(f"zero-length segment at {self.a}")


def _as_point_tuple(points: Iterable[Point2 | Sequence[float]]) -> Tuple[Point2, ...]:
    out = []
    for p in points:
        out.append(p if isinstance(p, Point2) else Point2(float(p[0]), float(p[1])))
    return tuple(out)


@dataclass(frozen=True, eq=True)
class _PointChain:
    points: Tuple[Point2, ...]
    closed: bool = False

    def __post_init__(self) -> None:
        pts = _as_point_tuple(self.points)
        object.__setattr__(self, "points", pts)
        min_points = 3 if self.closed else 2
        if len(pts) < min_points:
            kind = "closed" if self.closed else "open"
            raise ValueError(f"{kind} {type(self).__name__} needs at least {min_points} points, got {len(pts)}")
        for i in range(1, len(pts)):
            if pts[i] == pts[i - 1]:
                raise ValueError(f"consecutive duplicate point at index {i}: {pts[i]}")
        if self.closed and pts[0] == pts[-1]:
            raise ValueError("closed chains must not repeat the first point at the end")

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.array([(p.x, p.y) for p in self.points], dtype=np.float64)
        arr.flags.writeable = False
        return arr

    @classmethod
    def from_array(cls, xy: np.ndarray | Sequence[Sequence[float]], closed: bool = False):
        """Build a chain from an (n, 2) array, dropping consecutive duplicate points."""
        arr = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        keep = [0]
        for i in range(1, len(arr)):
            if not np.array_equal(arr[i], arr[keep[-1]]):
                keep.append(i)
        arr = arr[keep]
        if closed and len(arr) > 1 and np.array_equal(arr[0], arr[-1]):
            arr = arr[:-1]
        return cls(points=tuple(Point2(float(x), float(y)) for x, y in arr), closed=closed)


@dataclass(frozen=True)
class Polyline(_PointChain):
    @cached_property
    def segment_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        pts = self.array
        if self.closed:
            return pts, np.roll(pts, -1, axis=0)
        return pts[:-1], pts[1:]

    @cached_property
    def segment_lengths(self) -> np.ndarray:
        a, b = self.segment_arrays
        return np.hypot(*(b - a).T)

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def segments(self) -> List[Segment]:
        a, b = self.segment_arrays
        return [Segment(Point2(*map(float, p)), Point2(*map(float, q))) for p, q in zip(a, b)]


@dataclass(frozen=True)
class LandmarkChain(_PointChain):
    pass


def point_segment_distance(p: Point2, s: Segment) -> float:
    ax, ay = s.a.x, s.a.y
    dx, dy = s.b.x - ax, s.b.y - ay
    t = ((p.x - ax) * dx + (p.y - ay) * dy) / (dx * dx + dy * dy)
    t = min(1.0, max(0.0, t))
    return math.hypot(p.x - (ax + t * dx), p.y - (ay + t * dy))


def _segment_block_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    t = np.einsum("nkd,kd->nk", ap, ab) / np.einsum("kd,kd->k", ab, ab)
    np.clip(t, 0.0, 1.0, out=t)
    diff = ap - t[..., None] * ab[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def distances_to_polyline(xy: np.ndarray, c: Polyline) -> np.ndarray:
    """Distance from every point of an (..., 2) array to the polyline."""
    xy = np.asarray(xy, dtype=np.float64)
    flat = xy.reshape(-1, 2)
    a, b = c.segment_arrays
    best = np.full(len(flat), np.inf)
    if len(flat) == 0:
        return best.reshape(xy.shape[:-1])
    block = max(1, _DISTANCE_BLOCK // len(flat))
    for start in range(0, len(a), block):
        d = _segment_block_distances(flat, a[start:start + block], b[start:start + block])
        np.minimum(best, d.min(axis=1), out=best)
    return best.reshape(xy.shape[:-1])


def closest_points_on_polyline(xy: np.ndarray, c: Polyline) -> np.ndarray:
    """Foot point on the polyline for every row of an (n, 2) array."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    a, b = c.segment_arrays
    ab = b - a
    ap = xy[:, None, :] - a[None, :, :]
    t = np.einsum("nkd,kd->nk", ap, ab) / np.maximum(np.einsum("kd,kd->k", ab, ab), 1e-300)
    np.clip(t, 0.0, 1.0, out=t)
    feet = a[None, :, :] + t[..., None] * ab[None, :, :]
    best = np.argmin(np.hypot(*(xy[:, None, :] - feet).transpose(2, 0, 1)), axis=1)
    return feet[np.arange(len(xy)), best]


def point_polyline_distance(p: Point2, c: Polyline) -> float:
    if c is None or len(c.points) == 0:
        raise ValueError("distance to an empty polyline is undefined")
    return float(distances_to_polyline(np.array([[p.x, p.y]]), c)[0])


def _perp(d: np.ndarray) -> np.ndarray:
    return np.stack([-d[..., 1], d[..., 0]], axis=-1)


def _frames_at(c: Polyline, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Positions and unit normals at arclengths s (vertex samples use the bisector)."""
    a, b = c.segment_arrays
    lengths = c.segment_lengths
    cum = c.cumulative
    n_seg = len(a)
    unit = (b - a) / lengths[:, None]

    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, n_seg - 1)
    pos = a[idx] + unit[idx] * (s - cum[idx])[:, None]
    normals = _perp(unit[idx])

    # snap samples lying on a vertex; vertex v joins segment v-1 and segment v
    vertex = np.full(len(s), -1)
    at_start = np.abs(s - cum[idx]) <= _VERTEX_TOL
    at_end = np.abs(s - cum[idx + 1]) <= _VERTEX_TOL
    vertex[at_end] = idx[at_end] + 1
    vertex[at_start] = idx[at_start]
    if c.closed:
        vertex = np.where(vertex >= 0, vertex % n_seg, vertex)
        interior = vertex >= 0
    else:
        interior = (vertex > 0) & (vertex < n_seg)
    on_vertex = vertex >= 0
    pts = c.array
    pos[on_vertex] = pts[vertex[on_vertex] % len(pts)]

    v = vertex[interior]
    bisector = unit[(v - 1) % n_seg] + unit[v % n_seg]
    norm = np.hypot(bisector[:, 0], bisector[:, 1])
    reversal = norm < 1e-12
    bisector[reversal] = unit[v[reversal] % n_seg]
    norm[reversal] = 1.0
    normals[interior] = _perp(bisector / norm[:, None])
    return pos, normals


def polyline_normal_at(c: Polyline, arclength: float) -> Normal:
    total = c.length
    if not (-_VERTEX_TOL <= arclength <= total + _VERTEX_TOL):
        raise ValueError(f"arclength {arclength} outside [0, {total}]")
    s = np.array([min(max(arclength, 0.0), total)])
    _, normals = _frames_at(c, s)
    return (float(normals[0, 0]), float(normals[0, 1]))


def sample_arclengths(total: float, spacing: float, closed: bool) -> np.ndarray:
    if spacing <= 0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    n = int(math.floor(total / spacing + _VERTEX_TOL)) + 1
    s = np.arange(n, dtype=np.float64) * spacing
    if closed:
        return s[s < total - _VERTEX_TOL]
    s = s[s <= total + _VERTEX_TOL]
    s[-1] = min(s[-1], total)
    if total - s[-1] > _VERTEX_TOL:
        s = np.append(s, total)
    return s


def points_at_arclengths(c: Polyline, arclengths: Sequence[float]) -> np.ndarray:
    s = np.asarray(arclengths, dtype=np.float64)
    total = c.length
    if np.any(s < -_VERTEX_TOL) or np.any(s > total + _VERTEX_TOL):
        raise ValueError(f"arclengths outside [0, {total}]")
    pos, _ = _frames_at(c, np.clip(s, 0.0, total))
    return pos


def resample_arrays(c: Polyline, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    s = sample_arclengths(c.length, spacing, c.closed)
    return _frames_at(c, s)


def resample_polyline(c: Polyline, spacing: float) -> List[Tuple[Point2, Normal]]:
    pos, normals = resample_arrays(c, spacing)
    return [
        (Point2(float(p[0]), float(p[1])), (float(n[0]), float(n[1])))
        for p, n in zip(pos, normals)
    ]


def line_contour(l: LandmarkChain) -> Polyline:
    return Polyline(points=l.points, closed=l.closed)


def spline_contour(l: LandmarkChain, samples_per_span: int = 16) -> Polyline:
    """
    Quadratic spline through every landmark, densified into a polyline.

    Chord-length parameterization; interior knots sit midway between landmarks,
    which keeps the C1 quadratic interpolant stable. Closed chains are wrapped
    with two landmarks of periodic padding on each side before fitting.
    """
    pts = l.array
    n = len(pts)
    if n < 3:
        raise ValueError(f"spline_contour needs at least 3 landmarks, got {n}")
    if samples_per_span < 1:
        raise ValueError(f"samples_per_span must be >= 1, got {samples_per_span}")

    if l.closed:
        pad = 2
        sites = np.concatenate([pts[-pad:], pts, pts[:pad + 1]])
        first, n_spans = pad, n
    else:
        sites = pts
        first, n_spans = 0, n - 1

    t = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(sites, axis=0).T))])
    spline = make_interp_spline(t, sites, k=2, axis=0)

    frac = np.arange(samples_per_span, dtype=np.float64) / samples_per_span
    t0 = t[first:first + n_spans]
    t1 = t[first + 1:first + n_spans + 1]
    params = (t0[:, None] + frac[None, :] * (t1 - t0)[:, None]).ravel()
    dense = spline(params)
    # knots carry the landmarks exactly
    dense[::samples_per_span] = sites[first:first + n_spans]
    if not l.closed:
        dense = np.vstack([dense, pts[-1:]])
    return Polyline.from_array(dense, closed=l.closed)
