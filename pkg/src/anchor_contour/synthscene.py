"""
Procedural face-like scenes with exact anchor and contour ground truth.

Parts are laid out in face-local units (one unit = ``SceneSpec.face_scale`` px,
x to the right, y down, origin between the eyes) and mapped to the image by a
jittered similarity transform. Eyelids and the chin are elliptical arcs, brows,
nose and lips quadratic Bezier curves. Every contour is assigned a sinusoidal
ripple along its normal that vanishes at both ends. The ripple has 11 to 13
half-waves, so 16 landmarks sample it at 2.3 to 2.7 landmark gaps per
wavelength. Ripples shorter than ``min_detail_wavelength`` are flattened to
zero. With the default face only the chin keeps its ripple, which is the
shape detail between sparse landmarks that a dense contour can follow.

Randomness comes from SplitMix64 (Steele, Lea and Flood), a 64-bit generator
with a fixed published recurrence, so a seed reproduces the same scene on any
platform. Draws happen in a fixed order: face scale, rotation, x and y shift,
the two gaze offsets, then a wave count and a sign per contour in schema order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .annotation import Annotation, NamedAnchor, NamedContour
from .geometry import LandmarkChain, Point2, Polyline, points_at_arclengths
from .raster import Heatmap, Size, synth_contour_heatmap

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1

# arc-length spacing of the analytic curve samples, in px
_SAMPLE_SPACING = 0.35
_FINE_SAMPLES = 4096
_EYELID_T0 = math.pi / 4.0


class SceneFitError(ValueError):
    """Raised when the face does not fit the raster with the required margin."""


class SplitMix64:
    """SplitMix64: state += 0x9E3779B97F4A7C15, then two xor-shift-multiply rounds."""

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        """Uniform in [lo, hi) from the top 53 bits."""
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0 ** -53)

    def integer(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        return lo + self.next_u64() % (hi - lo + 1)


@dataclass(frozen=True)
class Jitter:
    scale: Tuple[float, float] = (0.95, 1.05)
    rotation_deg: Tuple[float, float] = (-8.0, 8.0)
    translation: Tuple[float, float] = (-8.0, 8.0)
    gaze: Tuple[float, float] = (-0.03, 0.03)

    def __post_init__(self) -> None:
        for name in ("scale", "rotation_deg", "translation", "gaze"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"jitter range {name} is empty: ({lo}, {hi})")
        if self.scale[0] <= 0:
            raise ValueError(f"jitter scale must stay > 0, got {self.scale}")

    @classmethod
    def none(cls) -> "Jitter":
        return cls(scale=(1.0, 1.0), rotation_deg=(0.0, 0.0), translation=(0.0, 0.0), gaze=(0.0, 0.0))


ANCHOR_NAMES: Tuple[str, ...] = (
    "right_eye_inner_corner",
    "right_eye_outer_corner",
    "left_eye_inner_corner",
    "left_eye_outer_corner",
    "right_iris_center",
    "left_iris_center",
    "nose_tip",
    "nose_bottom_center",
    "mouth_right_outer_corner",
    "mouth_left_outer_corner",
    "mouth_right_inner_corner",
    "mouth_left_inner_corner",
)

CONTOUR_NAMES: Tuple[str, ...] = (
    "right_eyebrow_center_line",
    "left_eyebrow_center_line",
    "right_eye_upper_lid",
    "right_eye_lower_lid",
    "left_eye_upper_lid",
    "left_eye_lower_lid",
    "nose_ridge",
    "nose_bottom_boundary",
    "mouth_upper_lip_outer",
    "mouth_lower_lip_outer",
    "mouth_upper_lip_inner",
    "mouth_lower_lip_inner",
    "chin_boundary",
)

NORMALIZATION_PAIR = ("right_eye_outer_corner", "left_eye_outer_corner")


def _part_of(name: str) -> str:
    if "eyebrow" in name:
        return "eyebrows"
    if "eye" in name or "iris" in name:
        return "eyes"
    if "nose" in name:
        return "nose"
    if "mouth" in name:
        return "mouth"
    return "chin"


PARTS: Dict[str, str] = {n: _part_of(n) for n in ANCHOR_NAMES + CONTOUR_NAMES}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    image_size: Size = (256, 256)
    face_scale: float = 100.0
    parts: Optional[Tuple[str, ...]] = None
    jitter: Jitter = field(default_factory=Jitter)
    detail_amplitude: float = 2.5
    min_detail_radius: float = 10.0
    min_detail_wavelength: float = 24.0
    margin: float = 6.0
    landmarks_per_contour: int = 16
    render: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if self.parts is not None:
            object.__setattr__(self, "parts", tuple(self.parts))
            unknown = sorted(set(self.parts) - set(PARTS))
            if unknown:
                raise ValueError(f"unknown scene parts: {unknown}")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.image_size}")
        if not self.face_scale > 0:
            raise ValueError(f"face_scale must be > 0, got {self.face_scale}")
        if self.detail_amplitude < 0 or self.margin < 0:
            raise ValueError("detail_amplitude and margin must be >= 0")
        if self.min_detail_radius <= 0 or self.min_detail_wavelength < 0:
            raise ValueError("min_detail_radius must be > 0 and min_detail_wavelength >= 0")
        if self.landmarks_per_contour < 2:
            raise ValueError(f"landmarks_per_contour must be >= 2, got {self.landmarks_per_contour}")

    def wants(self, name: str) -> bool:
        return self.parts is None or name in self.parts


# -- analytic curves in face-local units, parameter t in [0, 1] ------------------------------


@dataclass(frozen=True)
class QuadBezier:
    p0: Tuple[float, float]
    p1: Tuple[float, float]
    p2: Tuple[float, float]

    def at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)[:, None]
        p0, p1, p2 = (np.array(p) for p in (self.p0, self.p1, self.p2))
        return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2

    def tangent(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)[:, None]
        p0, p1, p2 = (np.array(p) for p in (self.p0, self.p1, self.p2))
        return 2 * (1 - t) * (p1 - p0) + 2 * t * (p2 - p1)


@dataclass(frozen=True)
class EllipseArc:
    """(cx + rx cos a, cy -/+ ry sin a) for a from a0 to a1; ``up`` bends toward -y."""

    cx: float
    cy: float
    rx: float
    ry: float
    a0: float
    a1: float
    up: bool

    def _angle(self, t: np.ndarray) -> np.ndarray:
        return self.a0 + (self.a1 - self.a0) * np.asarray(t, dtype=np.float64)

    def at(self, t: np.ndarray) -> np.ndarray:
        a = self._angle(t)
        sy = -1.0 if self.up else 1.0
        return np.column_stack([self.cx + self.rx * np.cos(a), self.cy + sy * self.ry * np.sin(a)])

    def tangent(self, t: np.ndarray) -> np.ndarray:
        a = self._angle(t)
        sy = -1.0 if self.up else 1.0
        da = self.a1 - self.a0
        return np.column_stack([-self.rx * np.sin(a) * da, sy * self.ry * np.cos(a) * da])


Curve = QuadBezier | EllipseArc


def _eyelid(cx: float, half_width: float, height: float, upper: bool) -> EllipseArc:
    rx = half_width / math.cos(_EYELID_T0)
    ry = height / (1.0 - math.sin(_EYELID_T0))
    # corners sit on y = 0
    cy = ry * math.sin(_EYELID_T0) if upper else -ry * math.sin(_EYELID_T0)
    return EllipseArc(cx, cy, rx, ry, _EYELID_T0, math.pi - _EYELID_T0, up=upper)


def _mirror(b: QuadBezier) -> QuadBezier:
    return QuadBezier(*((-p[0], p[1]) for p in (b.p2, b.p1, b.p0)))


_EYE_CENTER = 0.35
_EYE_HALF_WIDTH = 0.16


def face_curves() -> Dict[str, Curve]:
    """The face schema in local units; "right" is the subject's right (image left)."""
    right_brow = QuadBezier((-0.58, -0.17), (-0.36, -0.30), (-0.14, -0.19))
    return {
        "right_eyebrow_center_line": right_brow,
        "left_eyebrow_center_line": _mirror(right_brow),
        "right_eye_upper_lid": _eyelid(-_EYE_CENTER, _EYE_HALF_WIDTH, 0.08, upper=True),
        "right_eye_lower_lid": _eyelid(-_EYE_CENTER, _EYE_HALF_WIDTH, 0.05, upper=False),
        "left_eye_upper_lid": _eyelid(_EYE_CENTER, _EYE_HALF_WIDTH, 0.08, upper=True),
        "left_eye_lower_lid": _eyelid(_EYE_CENTER, _EYE_HALF_WIDTH, 0.05, upper=False),
        "nose_ridge": QuadBezier((0.0, 0.02), (0.03, 0.21), (0.0, 0.40)),
        "nose_bottom_boundary": QuadBezier((-0.13, 0.43), (0.0, 0.55), (0.13, 0.43)),
        "mouth_upper_lip_outer": QuadBezier((-0.30, 0.68), (0.0, 0.50), (0.30, 0.68)),
        "mouth_lower_lip_outer": QuadBezier((-0.30, 0.68), (0.0, 0.92), (0.30, 0.68)),
        "mouth_upper_lip_inner": QuadBezier((-0.25, 0.685), (0.0, 0.64), (0.25, 0.685)),
        "mouth_lower_lip_inner": QuadBezier((-0.25, 0.685), (0.0, 0.74), (0.25, 0.685)),
        "chin_boundary": EllipseArc(0.0, 0.05, 0.85, 0.95, 0.15 * math.pi, 0.85 * math.pi, up=False),
    }


# anchors pinned to a contour endpoint: name -> (contour, 0 for first point or -1 for last)
_ENDPOINT_ANCHORS: Dict[str, Tuple[str, int]] = {
    "right_eye_inner_corner": ("right_eye_upper_lid", 0),
    "right_eye_outer_corner": ("right_eye_upper_lid", -1),
    "left_eye_outer_corner": ("left_eye_upper_lid", 0),
    "left_eye_inner_corner": ("left_eye_upper_lid", -1),
    "nose_tip": ("nose_ridge", -1),
    "mouth_right_outer_corner": ("mouth_upper_lip_outer", 0),
    "mouth_left_outer_corner": ("mouth_upper_lip_outer", -1),
    "mouth_right_inner_corner": ("mouth_upper_lip_inner", 0),
    "mouth_left_inner_corner": ("mouth_upper_lip_inner", -1),
}

# contours that share both endpoints with another contour
_SHARED_ENDS: Dict[str, str] = {
    "right_eye_lower_lid": "right_eye_upper_lid",
    "left_eye_lower_lid": "left_eye_upper_lid",
    "mouth_lower_lip_outer": "mouth_upper_lip_outer",
    "mouth_lower_lip_inner": "mouth_upper_lip_inner",
}


@dataclass(frozen=True)
class Similarity:
    scale: float
    angle: float
    tx: float
    ty: float

    def apply(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        x, y = xy[:, 0], xy[:, 1]
        return np.column_stack([self.tx + self.scale * (c * x - s * y), self.ty + self.scale * (s * x + c * y)])


@dataclass(frozen=True)
class ContourDetail:
    """One contour's analytic model: base curve, ripple and placement."""

    curve: Curve
    waves: int
    amplitude: float  # px, signed
    transform: Similarity
    fine_t: Tuple[float, ...] = field(repr=False, default=())
    fine_tau: Tuple[float, ...] = field(repr=False, default=())

    def points(self, t: np.ndarray) -> np.ndarray:
        """Exact image-space points of the rippled curve at parameters t."""
        t = np.asarray(t, dtype=np.float64)
        base = self.curve.at(t)
        tan = self.curve.tangent(t)
        normal = np.column_stack([-tan[:, 1], tan[:, 0]]) / np.hypot(tan[:, 0], tan[:, 1])[:, None]
        tau = np.interp(t, self.fine_t, self.fine_tau)
        offset = (self.amplitude / self.transform.scale) * np.sin(math.pi * self.waves * tau)
        return self.transform.apply(base + offset[:, None] * normal)

    def t_for_tau(self, tau: np.ndarray) -> np.ndarray:
        return np.interp(tau, self.fine_tau, self.fine_t)


def _arclength_table(curve: Curve) -> Tuple[np.ndarray, np.ndarray, float]:
    t = np.linspace(0.0, 1.0, _FINE_SAMPLES)
    p = curve.at(t)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(p, axis=0).T))])
    return t, s / s[-1], float(s[-1])


def _ripple_amplitude(length_px: float, waves: int, spec: SceneSpec) -> float:
    wavelength = 2.0 * length_px / waves
    if wavelength < spec.min_detail_wavelength:
        return 0.0
    # a ripple of amplitude A and wavelength L bends with radius L^2 / (4 pi^2 A) at its crests
    return min(spec.detail_amplitude, wavelength ** 2 / (4.0 * math.pi ** 2 * spec.min_detail_radius))


@dataclass(frozen=True)
class SceneGT:
    annotation: Annotation
    sparse: Mapping[str, LandmarkChain]
    details: Mapping[str, ContourDetail] = field(default_factory=dict, repr=False)
    render: Optional[Heatmap] = field(default=None, compare=False, repr=False)


def sample_landmarks(contour: Polyline, k: int) -> LandmarkChain:
    """k landmarks at uniform arc length: both endpoints included when open, evenly around when closed."""
    if k < 2:
        raise ValueError(f"sample_landmarks needs k >= 2, got {k}")
    total = contour.length
    if contour.closed:
        s = total * np.arange(k, dtype=np.float64) / k
    else:
        s = np.linspace(0.0, total, k)
    return LandmarkChain.from_array(points_at_arclengths(contour, s), closed=contour.closed and k >= 3)


def _check_margin(name: str, xy: np.ndarray, spec: SceneSpec) -> None:
    w, h = spec.image_size
    m = spec.margin
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    if lo[0] < m or lo[1] < m or hi[0] > w - 1 - m or hi[1] > h - 1 - m:
        raise SceneFitError(
            f"{name} spans [{lo[0]:.1f}, {hi[0]:.1f}]x[{lo[1]:.1f}, {hi[1]:.1f}], "
            f"outside the {w}x{h} raster with a {m} px margin"
        )


def gen_scene(spec: SceneSpec) -> SceneGT:
    rng = SplitMix64(spec.seed)
    j = spec.jitter
    w, h = spec.image_size
    scale = spec.face_scale * rng.uniform(*j.scale)
    angle = math.radians(rng.uniform(*j.rotation_deg))
    tx = w / 2.0 + rng.uniform(*j.translation)
    ty = h / 2.0 - 0.35 * spec.face_scale + rng.uniform(*j.translation)
    transform = Similarity(scale, angle, tx, ty)
    gaze = (rng.uniform(*j.gaze), rng.uniform(*j.gaze))

    curves = face_curves()
    details: Dict[str, ContourDetail] = {}
    dense: Dict[str, np.ndarray] = {}
    for name in CONTOUR_NAMES:
        waves = rng.integer(11, 13)
        sign = 1.0 if rng.next_u64() & 1 else -1.0
        fine_t, fine_tau, length = _arclength_table(curves[name])
        length_px = length * scale
        detail = ContourDetail(
            curve=curves[name],
            waves=waves,
            amplitude=sign * _ripple_amplitude(length_px, waves, spec),
            transform=transform,
            fine_t=tuple(fine_t),
            fine_tau=tuple(fine_tau),
        )
        n = int(math.ceil(length_px / _SAMPLE_SPACING)) + 1
        pts = detail.points(detail.t_for_tau(np.linspace(0.0, 1.0, n)))
        details[name] = detail
        dense[name] = pts

    # shared corners are the exact same floats on both contours
    for lower, upper in _SHARED_ENDS.items():
        dense[lower][0] = dense[upper][0]
        dense[lower][-1] = dense[upper][-1]

    anchor_xy: Dict[str, np.ndarray] = {}
    for name, (contour, end) in _ENDPOINT_ANCHORS.items():
        anchor_xy[name] = dense[contour][end]
    bottom = dense["nose_bottom_boundary"]
    anchor_xy["nose_bottom_center"] = bottom[len(bottom) // 2]
    for name, cx, g in (("right_iris_center", -_EYE_CENTER, gaze[0]), ("left_iris_center", _EYE_CENTER, gaze[1])):
        anchor_xy[name] = transform.apply(np.array([[cx + g, -0.01]]))[0]

    anchors = tuple(
        NamedAnchor(n, Point2(float(anchor_xy[n][0]), float(anchor_xy[n][1]))) for n in ANCHOR_NAMES if spec.wants(n)
    )
    contours = tuple(NamedContour(n, Polyline.from_array(dense[n])) for n in CONTOUR_NAMES if spec.wants(n))
    for a in anchors:
        _check_margin(a.name, np.array([a.point.as_tuple()]), spec)
    for c in contours:
        _check_margin(c.name, c.polyline.array, spec)

    sparse = {c.name: sample_landmarks(c.polyline, spec.landmarks_per_contour) for c in contours}
    names = {a.name for a in anchors}
    pair = NORMALIZATION_PAIR if all(n in names for n in NORMALIZATION_PAIR) else None
    used = names | {c.name for c in contours}
    annotation = Annotation(
        image_size=spec.image_size,
        anchors=anchors,
        contours=contours,
        landmarks=sparse,
        normalization_pair=pair,
        parts={n: p for n, p in PARTS.items() if n in used},
    )
    log.debug("scene seed=%d scale=%.2f angle=%.2f deg", spec.seed, scale, math.degrees(angle))
    render = render_scene(annotation) if spec.render else None
    return SceneGT(
        annotation=annotation,
        sparse=sparse,
        details={n: details[n] for n in CONTOUR_NAMES if spec.wants(n)},
        render=render,
    )


def render_scene(annotation: Annotation, stroke_sigma: float = 1.5) -> Heatmap:
    """Grayscale visualization: a shaded face blob with darkened contour strokes."""
    w, h = annotation.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), 0.15)
    pts = [c.polyline.array for c in annotation.contours] + [
        np.array([a.point.as_tuple()]) for a in annotation.anchors
    ]
    if pts:
        allpts = np.vstack(pts)
        lo, hi = allpts.min(axis=0), allpts.max(axis=0)
        cx, cy = (lo + hi) / 2.0
        rx, ry = np.maximum((hi - lo) / 2.0 * 1.15, 1.0)
        r2 = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        img += 0.65 * np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
    for c in annotation.contours:
        img -= 0.5 * synth_contour_heatmap(c.polyline, stroke_sigma, (w, h)).as_float64()
    return Heatmap(np.clip(img, 0.0, 1.0))
