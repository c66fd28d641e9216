"""
Heatmap loss functionals and their gradients with respect to the prediction.

Fully supervised: a hard-example weighted RMS over every pixel of every channel.
Weakly supervised (one contour channel, only sparse landmarks known):

* landmark term: the predicted contour must pass through every landmark
  (except the two ends of an open chain, which the line term covers),
* line term: it must stay within D px of the line-contour through the landmarks,
* far term: it must vanish further than D px from the line-contour.

Contourness enters the first two terms through ``map_f``, which turns a score
into a loss in [0, 1]. Every loss accepts Heatmaps or float64 arrays so the
gradients can be checked against finite differences without float32 rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .contourness import build_filter_bank, contourness_array, contourness_vjp, ideal_contourness
from .geometry import LandmarkChain, Point2, Polyline, distances_to_polyline, line_contour, resample_arrays
from .raster import Heatmap, HeatmapStack, SigmaParam, Size, as_grid, as_sigma, bilinear_array, bilinear_scatter

log = logging.getLogger(__name__)

# below this weighted sum of squares the RMS gradient is taken as zero
_SUM_FLOOR = 1e-12
LANDMARK_TOLERANCE = 1e-6

HeatmapLike = Heatmap | np.ndarray


@dataclass(frozen=True)
class FParams:
    """Contourness to loss mapping f(C) = clamp(1 - 2^((C - c_max) / scale), 0, 1)."""

    c_max: float
    scale: float = 1.5

    def __post_init__(self) -> None:
        if not math.isfinite(self.c_max):
            raise ValueError(f"c_max must be finite, got {self.c_max}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be a finite value > 0, got {self.scale}")

    @classmethod
    def for_sigma(cls, sigma: SigmaParam | float, scale: float = 1.5) -> "FParams":
        return cls(c_max=ideal_contourness(sigma), scale=scale)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    lambda_landmark: float = 0.1
    lambda_line: float = 0.1
    D: int = 6
    f_params: Optional[FParams] = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha >= 1.0):
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if int(self.D) != self.D or self.D < 1:
            raise ValueError(f"D must be an integer >= 1, got {self.D}")
        for name in ("lambda_landmark", "lambda_line"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) >= 0):
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def f_for(self, sigma: SigmaParam | float) -> FParams:
        return self.f_params if self.f_params is not None else FParams.for_sigma(sigma)


@dataclass(frozen=True)
class WeakSupervision:
    """Sparse supervision of one contour: its landmarks and the line-contour through them."""

    landmarks: Tuple[Point2, ...]
    line_contour: Polyline
    anchors: Tuple[Point2, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if not self.landmarks:
            raise ValueError("weak supervision needs at least one landmark")
        xy = np.array([p.as_tuple() for p in self.landmarks], dtype=np.float64)
        off = distances_to_polyline(xy, self.line_contour)
        if np.any(off > LANDMARK_TOLERANCE):
            worst = int(np.argmax(off))
            raise ValueError(f"landmark {self.landmarks[worst]} is {off[worst]:.3g} px off the line-contour")

    @classmethod
    def from_chain(cls, chain: LandmarkChain, anchors: Sequence[Point2] = ()) -> "WeakSupervision":
        return cls(landmarks=chain.points, line_contour=line_contour(chain), anchors=tuple(anchors))

    def scored_landmarks(self) -> np.ndarray:
        """
        Mask of the landmarks that enter the landmark term.

        A contour that ends at a landmark reaches only about half of C_max there, so
        the two ends of an open line-contour are left out whenever an interior
        landmark remains. The line and far terms still cover the ends.
        """
        xy = np.array([p.as_tuple() for p in self.landmarks], dtype=np.float64)
        scored = np.ones(len(xy), dtype=bool)
        if self.line_contour.closed:
            return scored
        for end in (self.line_contour.array[0], self.line_contour.array[-1]):
            scored &= np.hypot(*(xy - end).T) > LANDMARK_TOLERANCE
        return scored if scored.any() else np.ones(len(xy), dtype=bool)


class WeakLoss(NamedTuple):
    total: float
    landmark: float
    line: float
    far: float


def _stack_arrays(gt, pred) -> Tuple[np.ndarray, np.ndarray]:
    def grid3(x) -> np.ndarray:
        if isinstance(x, HeatmapStack):
            return x.as_array().astype(np.float64)
        if isinstance(x, Heatmap):
            return x.as_float64()[None]
        arr = np.array(x, dtype=np.float64)
        return arr[None] if arr.ndim == 2 else arr

    g, p = grid3(gt), grid3(pred)
    if g.shape != p.shape:
        raise ValueError(f"ground truth shape {g.shape} does not match prediction shape {p.shape}")
    if g.size == 0:
        raise ValueError("loss over an empty stack is undefined")
    return g, p


def _is_single(x) -> bool:
    return isinstance(x, Heatmap) or (not isinstance(x, HeatmapStack) and np.ndim(x) == 2)


def _weights(h: np.ndarray, err: np.ndarray, alpha: float) -> np.ndarray:
    return 1.0 + (alpha - 1.0) * np.maximum(h, np.abs(err))


def weight_map(gt: HeatmapLike, pred: HeatmapLike, alpha: float) -> Heatmap:
    g, p = as_grid(gt), as_grid(pred)
    if g.shape != p.shape:
        raise ValueError(f"ground truth shape {g.shape} does not match prediction shape {p.shape}")
    return Heatmap(_weights(g, g - p, alpha))


def full_loss(gt, pred, alpha: float = 10.0) -> float:
    """Weighted RMS, sqrt(sum W (H - H_pred)^2) / |H|, over all channels and pixels."""
    g, p = _stack_arrays(gt, pred)
    err = g - p
    return math.sqrt(float(np.sum(_weights(g, err, alpha) * err * err))) / g.size


def full_loss_gradient(gt, pred, alpha: float = 10.0) -> np.ndarray:
    """Gradient of ``full_loss`` with the prediction's shape (2D for a single heatmap)."""
    g, p = _stack_arrays(gt, pred)
    err = g - p
    total = float(np.sum(_weights(g, err, alpha) * err * err))
    shape = p.shape[1:] if _is_single(pred) else p.shape
    if total <= _SUM_FLOOR:
        return np.zeros(shape)
    # the |E| branch of max(H, |E|) wins only when strictly larger
    hard = np.abs(err) > g
    d_sum = -2.0 * _weights(g, err, alpha) * err
    d_sum += np.where(hard, err * err * (alpha - 1.0) * -np.sign(err), 0.0)
    return (d_sum / (2.0 * math.sqrt(total) * g.size)).reshape(shape)


def map_f(c, f_params: FParams):
    raw = 1.0 - np.exp2((np.asarray(c, dtype=np.float64) - f_params.c_max) / f_params.scale)
    out = np.clip(raw, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def map_f_derivative(c, f_params: FParams) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    p = np.exp2((c - f_params.c_max) / f_params.scale)
    return np.where(p < 1.0, -math.log(2.0) / f_params.scale * p, 0.0)


def _valid_bounds(shape: Tuple[int, int], sigma: float) -> Tuple[int, int, int]:
    r = build_filter_bank(sigma).radius
    return r, shape[1] - 1 - r, shape[0] - 1 - r


def _in_valid(xs: np.ndarray, ys: np.ndarray, shape: Tuple[int, int], sigma: float) -> np.ndarray:
    r, x_hi, y_hi = _valid_bounds(shape, sigma)
    return (xs >= r) & (xs <= x_hi) & (ys >= r) & (ys <= y_hi)


def _landmark_terms(x: np.ndarray, sup: WeakSupervision, sigma: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xy = np.array([p.as_tuple() for p in sup.landmarks], dtype=np.float64)
    xs, ys = xy[:, 0], xy[:, 1]
    inside = _in_valid(xs, ys, x.shape, sigma)
    if not np.all(inside):
        bad = sup.landmarks[int(np.argmin(inside))]
        raise ValueError(f"landmark {bad} lies in the invalid border zone")
    scored = sup.scored_landmarks()
    xs, ys = xs[scored], ys[scored]
    return xs, ys, bilinear_array(contourness_array(x, sigma), xs, ys)


def weak_landmark_loss(
    pred: HeatmapLike, supervision: WeakSupervision, sigma: SigmaParam | float, f_params: FParams
) -> float:
    s = as_sigma(sigma)
    _, _, c = _landmark_terms(as_grid(pred), supervision, s)
    return float(np.mean(map_f(c, f_params)))


def weak_landmark_gradient(
    pred: HeatmapLike, supervision: WeakSupervision, sigma: SigmaParam | float, f_params: FParams
) -> np.ndarray:
    s = as_sigma(sigma)
    x = as_grid(pred)
    xs, ys, c = _landmark_terms(x, supervision, s)
    g_c = bilinear_scatter(x.shape, xs, ys, map_f_derivative(c, f_params) / len(c))
    return contourness_vjp(x, s, g_c)


def _line_probes(x: np.ndarray, sup: WeakSupervision, sigma: float, D: int):
    """Probe positions along the normals, the index of the best probe per sample and its C."""
    pos, normals = resample_arrays(sup.line_contour, 1.0)
    d = np.arange(-D, D + 1, dtype=np.float64)
    px = pos[:, 0, None] + d[None, :] * normals[:, 0, None]
    py = pos[:, 1, None] + d[None, :] * normals[:, 1, None]
    inside = _in_valid(px, py, x.shape, sigma)
    dead = ~inside.any(axis=1)
    if np.any(dead):
        s = int(np.argmax(dead))
        raise ValueError(f"every probe of line sample {s} at ({pos[s, 0]:.3f}, {pos[s, 1]:.3f}) is outside the valid region")
    c = np.full(px.shape, -np.inf)
    c[inside] = bilinear_array(contourness_array(x, sigma), px[inside], py[inside])
    best = np.argmax(c, axis=1)
    rows = np.arange(len(best))
    return px[rows, best], py[rows, best], c[rows, best]


def weak_line_loss(
    pred: HeatmapLike,
    supervision: WeakSupervision,
    sigma: SigmaParam | float,
    weights: LossWeights,
    f_params: FParams,
) -> float:
    _, _, c = _line_probes(as_grid(pred), supervision, as_sigma(sigma), int(weights.D))
    return float(np.mean(map_f(c, f_params)))


def weak_line_gradient(
    pred: HeatmapLike,
    supervision: WeakSupervision,
    sigma: SigmaParam | float,
    weights: LossWeights,
    f_params: FParams,
) -> np.ndarray:
    s = as_sigma(sigma)
    x = as_grid(pred)
    bx, by, c = _line_probes(x, supervision, s, int(weights.D))
    g_c = bilinear_scatter(x.shape, bx, by, map_f_derivative(c, f_params) / len(c))
    return contourness_vjp(x, s, g_c)


def far_mask(line: Polyline, D: float, size: Size) -> Heatmap:
    w, h = int(size[0]), int(size[1])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = distances_to_polyline(np.stack([xx, yy], axis=-1), line)
    return Heatmap((dist > D).astype(np.float32))


def _far_sum(x: np.ndarray, mask: np.ndarray, alpha: float) -> float:
    return float(np.sum(mask * (1.0 + (alpha - 1.0) * np.abs(x)) * x * x))


def weak_far_loss(pred: HeatmapLike, line: Polyline, D: float, alpha: float = 10.0) -> float:
    x = as_grid(pred)
    mask = far_mask(line, D, (x.shape[1], x.shape[0])).as_float64()
    return math.sqrt(_far_sum(x, mask, alpha)) / x.size


def weak_far_gradient(pred: HeatmapLike, line: Polyline, D: float, alpha: float = 10.0) -> np.ndarray:
    x = as_grid(pred)
    mask = far_mask(line, D, (x.shape[1], x.shape[0])).as_float64()
    total = _far_sum(x, mask, alpha)
    if total <= _SUM_FLOOR:
        return np.zeros_like(x)
    d_sum = mask * (2.0 * x * (1.0 + (alpha - 1.0) * np.abs(x)) + (alpha - 1.0) * np.sign(x) * x * x)
    return d_sum / (2.0 * math.sqrt(total) * x.size)


def weak_loss(
    pred: HeatmapLike,
    supervision: WeakSupervision,
    sigma: SigmaParam | float,
    weights: LossWeights = LossWeights(),
    f_params: Optional[FParams] = None,
) -> WeakLoss:
    fp = f_params if f_params is not None else weights.f_for(sigma)
    landmark = weak_landmark_loss(pred, supervision, sigma, fp)
    line = weak_line_loss(pred, supervision, sigma, weights, fp)
    far = weak_far_loss(pred, supervision.line_contour, weights.D, weights.alpha)
    total = far + weights.lambda_landmark * landmark + weights.lambda_line * line
    log.debug("weak loss: far=%.6g landmark=%.6g line=%.6g", far, landmark, line)
    return WeakLoss(total=total, landmark=landmark, line=line, far=far)


def weak_loss_gradient(
    pred: HeatmapLike,
    supervision: WeakSupervision,
    sigma: SigmaParam | float,
    weights: LossWeights = LossWeights(),
    f_params: Optional[FParams] = None,
) -> np.ndarray:
    fp = f_params if f_params is not None else weights.f_for(sigma)
    grad = weak_far_gradient(pred, supervision.line_contour, weights.D, weights.alpha)
    if weights.lambda_landmark:
        grad = grad + weights.lambda_landmark * weak_landmark_gradient(pred, supervision, sigma, fp)
    if weights.lambda_line:
        grad = grad + weights.lambda_line * weak_line_gradient(pred, supervision, sigma, weights, fp)
    return grad


LOSS_KINDS: Dict[str, Tuple[Callable[..., float], Callable[..., np.ndarray]]] = {
    "full": (full_loss, full_loss_gradient),
    "far": (weak_far_loss, weak_far_gradient),
    "landmark": (weak_landmark_loss, weak_landmark_gradient),
    "line": (weak_line_loss, weak_line_gradient),
    "weak": (lambda *a, **k: weak_loss(*a, **k).total, weak_loss_gradient),
}


def _lookup(kind: str) -> Tuple[Callable[..., float], Callable[..., np.ndarray]]:
    try:
        return LOSS_KINDS[kind]
    except KeyError:
        raise KeyError(f"unknown loss kind {kind!r}, expected one of {sorted(LOSS_KINDS)}") from None


def loss_value(kind: str, *args, **kwargs) -> float:
    return _lookup(kind)[0](*args, **kwargs)


def loss_gradient(kind: str, *args, **kwargs) -> np.ndarray:
    """
    Analytic gradient of the named loss with respect to every pixel of pred.

    Arguments are those of the loss itself, e.g.
    ``loss_gradient("far", pred, line, D, alpha)`` or
    ``loss_gradient("full", gt, pred, alpha)``.
    """
    return _lookup(kind)[1](*args, **kwargs)
