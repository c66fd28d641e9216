"""
Explicit anchor and contour geometry from predicted heatmaps.

Anchors come from a local center of mass around the heatmap peak. Contours come
from the contourness map: non-maximum suppression along the normal, a parabola
fit for the sub-pixel offset, then Canny-style hysteresis linking of the
surviving pixels into ordered traces.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import ndimage

from .contourness import ContournessFields, contourness_map, ideal_contourness
from .geometry import Point2, Polyline
from .raster import Heatmap, HeatmapStack, SigmaParam, as_sigma, bilinear_array, split_channel_name

log = logging.getLogger(__name__)

# consecutive trace points never sit further apart than this
MAX_TRACE_GAP = math.sqrt(2.0) * 1.5
# absorbs the 9-significant-digit rounding of stored traces
_GAP_SLACK = 1e-6
# default thresholds as fractions of C_max(sigma)
HIGH_FRACTION = 0.5
LOW_FRACTION = 0.25

_OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0))

Pixel = Tuple[int, int]  # (row, col)


class NoAnchorError(ValueError):
    """Raised when a heatmap has no strictly positive pixel."""


@dataclass(frozen=True)
class ExtractionParams:
    """
    Contour extraction settings. Thresholds left as None resolve to fixed
    fractions of the ideal contourness at ``sigma`` (see ``with_defaults``).
    """

    sigma: float = 3.0
    high_threshold: Optional[float] = None
    low_threshold: Optional[float] = None
    min_trace_length: int = 3

    def __post_init__(self) -> None:
        as_sigma(self.sigma)
        if self.min_trace_length < 1:
            raise ValueError(f"min_trace_length must be >= 1, got {self.min_trace_length}")
        for name in ("high_threshold", "low_threshold"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a finite value > 0, got {value}")
        if self.high_threshold is not None and self.low_threshold is not None:
            if self.low_threshold > self.high_threshold:
                raise ValueError(
                    f"low_threshold {self.low_threshold} exceeds high_threshold {self.high_threshold}"
                )

    def with_defaults(self) -> "ExtractionParams":
        c_max = ideal_contourness(self.sigma)
        high = self.high_threshold if self.high_threshold is not None else HIGH_FRACTION * c_max
        low = self.low_threshold if self.low_threshold is not None else LOW_FRACTION * c_max
        low = min(low, high) if self.low_threshold is None else low
        if low > high:
            raise ValueError(f"low_threshold {low:g} exceeds high_threshold {high:g} at sigma={self.sigma}")
        return replace(self, high_threshold=high, low_threshold=low)

    def to_dict(self) -> dict:
        p = self.with_defaults()
        return {
            "sigma": p.sigma,
            "high_threshold": p.high_threshold,
            "low_threshold": p.low_threshold,
            "min_trace_length": p.min_trace_length,
        }


@dataclass(frozen=True)
class Candidate:
    """An NMS survivor: refined sub-pixel point, its contourness and source pixel."""

    point: Point2
    score: float
    row: int
    col: int

    @property
    def pixel(self) -> Pixel:
        return (self.row, self.col)


@dataclass(frozen=True)
class ContourTrace:
    points: Tuple[Point2, ...]
    scores: Tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.points) != len(self.scores):
            raise ValueError(f"{len(self.points)} points but {len(self.scores)} scores")
        for a, b in zip(self.points, self.points[1:]):
            if a.distance_to(b) > MAX_TRACE_GAP + _GAP_SLACK:
                raise ValueError(f"trace points {a} and {b} are more than {MAX_TRACE_GAP:.3f} px apart")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_loop(self) -> bool:
        return len(self.points) >= 8 and self.points[0].distance_to(self.points[-1]) <= MAX_TRACE_GAP

    def to_polyline(self) -> Polyline:
        xy = np.array([p.as_tuple() for p in self.points], dtype=np.float64)
        return Polyline.from_array(xy, closed=self.is_loop)


def extract_anchor(h: Heatmap, sigma: SigmaParam | float) -> Point2:
    s = as_sigma(sigma)
    x = h.as_float64()
    if not np.any(x > 0.0):
        raise NoAnchorError("no anchor present: heatmap has no positive pixel")
    py, px = np.unravel_index(int(np.argmax(x)), x.shape)
    reach = int(math.floor(s))
    y0, y1 = max(0, py - reach), min(h.height - 1, py + reach)
    x0, x1 = max(0, px - reach), min(h.width - 1, px + reach)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    disc = (xx - px) ** 2 + (yy - py) ** 2 <= s * s
    w = np.where(disc, np.maximum(x[y0:y1 + 1, x0:x1 + 1], 0.0), 0.0)
    total = w.sum()
    return Point2(float((w * xx).sum() / total), float((w * yy).sum() / total))


def parabola_offset(c_minus: np.ndarray, c0: np.ndarray, c_plus: np.ndarray) -> np.ndarray:
    """Vertex offset of the parabola through (-1, c_minus), (0, c0), (1, c_plus)."""
    second = c_minus - 2.0 * c0 + c_plus
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(second < 0.0, (c_minus - c_plus) / (2.0 * second), 0.0)
    return np.clip(delta, -0.5, 0.5)


def nms_subpixel(fields: ContournessFields, params: ExtractionParams | None = None) -> List[Candidate]:
    """
    Strict maxima of C along the normal at every valid pixel, shifted to the
    parabola vertex. With params, maxima below the low threshold are dropped early.
    """
    rows, cols = np.nonzero(fields.valid)
    if len(rows) == 0:
        return []
    c = fields.c
    c0 = c[rows, cols]
    nx = np.cos(fields.n[rows, cols])
    ny = np.sin(fields.n[rows, cols])
    xs = cols.astype(np.float64)
    ys = rows.astype(np.float64)
    c_plus = bilinear_array(c, xs + nx, ys + ny)
    c_minus = bilinear_array(c, xs - nx, ys - ny)

    keep = (c0 > c_plus) & (c0 > c_minus)
    if params is not None:
        keep &= c0 >= params.with_defaults().low_threshold
    delta = parabola_offset(c_minus[keep], c0[keep], c_plus[keep])
    px = xs[keep] + delta * nx[keep]
    py = ys[keep] + delta * ny[keep]
    return [
        Candidate(Point2(float(x), float(y)), float(score), int(r), int(k))
        for x, y, score, r, k in zip(px, py, c0[keep], rows[keep], cols[keep])
    ]


def _neighbors(p: Pixel, pool: Set[Pixel]) -> List[Pixel]:
    return [(p[0] + dr, p[1] + dc) for dr, dc in _OFFSETS if (p[0] + dr, p[1] + dc) in pool]


def _step_key(cur: Pixel, q: Pixel, direction: Optional[Tuple[float, float]], aligned_first: bool):
    dr, dc = q[0] - cur[0], q[1] - cur[1]
    dist = math.hypot(dr, dc)
    align = 0.0 if direction is None else (dr * direction[0] + dc * direction[1]) / dist
    if aligned_first:
        return (-align, q)
    return (dist, -align, q)


def _walk_component(component: Set[Pixel]) -> List[List[Pixel]]:
    """Order a connected pixel set into walks; branches left over start new walks."""
    unvisited = set(component)
    walks: List[List[Pixel]] = []
    while unvisited:
        ends = sorted(p for p in unvisited if len(_neighbors(p, unvisited)) <= 1)
        cur = ends[0] if ends else min(unvisited)
        unvisited.remove(cur)
        walk = [cur]
        direction: Optional[Tuple[float, float]] = None
        while True:
            options = _neighbors(cur, unvisited)
            if not options:
                break
            junction = direction is not None and len(_neighbors(cur, component)) >= 3
            nxt = min(options, key=lambda q: _step_key(cur, q, direction, junction))
            dr, dc = nxt[0] - cur[0], nxt[1] - cur[1]
            norm = math.hypot(dr, dc)
            direction = (dr / norm, dc / norm)
            unvisited.remove(nxt)
            walk.append(nxt)
            cur = nxt
        walks.append(walk)
    return walks


def _split_at_gaps(cands: Sequence[Candidate]) -> List[List[Candidate]]:
    pieces: List[List[Candidate]] = [[cands[0]]]
    for prev, cur in zip(cands, cands[1:]):
        if prev.point.distance_to(cur.point) > MAX_TRACE_GAP:
            pieces.append([])
        pieces[-1].append(cur)
    return pieces


def hysteresis_trace(candidates: Sequence[Candidate], params: ExtractionParams) -> List[ContourTrace]:
    p = params.with_defaults()
    kept = [c for c in candidates if c.score >= p.low_threshold]
    if not kept:
        return []
    by_pixel: Dict[Pixel, Candidate] = {c.pixel: c for c in kept}
    r0 = min(c.row for c in kept)
    c0 = min(c.col for c in kept)
    mask = np.zeros((max(c.row for c in kept) - r0 + 1, max(c.col for c in kept) - c0 + 1), dtype=bool)
    for c in kept:
        mask[c.row - r0, c.col - c0] = True

    labels, n_labels = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    traces: List[ContourTrace] = []
    for label in range(1, n_labels + 1):
        rr, cc = np.nonzero(labels == label)
        component = {(int(r) + r0, int(k) + c0) for r, k in zip(rr, cc)}
        if max(by_pixel[q].score for q in component) < p.high_threshold:
            continue
        for walk in _walk_component(component):
            for piece in _split_at_gaps([by_pixel[q] for q in walk]):
                if len(piece) < p.min_trace_length:
                    continue
                traces.append(ContourTrace(points=[c.point for c in piece], scores=[c.score for c in piece]))
    return traces


def extract_contour(h: Heatmap, params: ExtractionParams) -> List[ContourTrace]:
    fields = contourness_map(h, params.sigma)
    return hysteresis_trace(nms_subpixel(fields, params), params)


def extract_stack(
    stack: HeatmapStack, params: ExtractionParams, threads: int = 1
) -> Tuple[Dict[str, Point2], Dict[str, List[ContourTrace]]]:
    """Extract every channel; anchors whose heatmap is empty are left out and logged."""
    params = params.with_defaults()

    def run(item):
        name, h = item
        role, short = split_channel_name(name)
        if role == "anchor":
            try:
                return role, short, extract_anchor(h, params.sigma)
            except NoAnchorError:
                log.warning("channel %s: no anchor present", name)
                return role, short, None
        return role, short, extract_contour(h, params)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(run, zip(stack.names, stack.channels)))

    anchors: Dict[str, Point2] = {}
    traces: Dict[str, List[ContourTrace]] = {}
    for role, name, value in results:
        if role == "anchor":
            if value is not None:
                anchors[name] = value
        else:
            traces[name] = value
    log.debug("extracted %d anchors and %d traces", len(anchors), sum(len(t) for t in traces.values()))
    return anchors, traces
