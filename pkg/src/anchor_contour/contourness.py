"""
Contourness: how well a heatmap neighborhood matches an oriented ridge template.

The template of a straight contour through the origin with orientation theta is

    T(i, j) = max(0, 1 - 2 (j cos(theta) - i sin(theta))^2 / sigma^2)

with i the horizontal and j the vertical offset. Contourness at a pixel is the
negated, Gaussian-weighted template matching error minimized over theta. The
theta-independent term sum(G T^2) is dropped, so a zero heatmap scores 0 and an
ideal contour scores C_max(sigma) (about 4.92 at sigma=2).

The minimization over theta has a closed form through three steerable basis
filters G2a, G2b, G2c; every "correlate" below is a correlation with zero
padding (no kernel flip).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Tuple

import numpy as np
from scipy import ndimage

from .geometry import Point2, Polyline
from .raster import Heatmap, SigmaParam, as_grid, as_sigma, synth_contour_heatmap

# lower clamp of the square-root argument when differentiating
_ROOT_FLOOR = 1e-12


def template(sigma: SigmaParam | float, theta: float, i, j):
    s = as_sigma(sigma)
    proj = np.multiply(j, math.cos(theta)) - np.multiply(i, math.sin(theta))
    return np.maximum(0.0, 1.0 - 2.0 * proj * proj / (s * s))


@dataclass(frozen=True, eq=False)
class FilterBank:
    sigma: float
    radius: int
    g: np.ndarray
    g2a: np.ndarray
    g2b: np.ndarray
    g2c: np.ndarray

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    def kernel_at(self, name: str, x: int, y: int) -> float:
        return float(getattr(self, name)[y + self.radius, x + self.radius])


@lru_cache(maxsize=32)
def _bank_for(sigma: float) -> FilterBank:
    r = int(math.ceil(2.0 * sigma))
    j, i = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    s2 = sigma * sigma
    g = np.exp(-(i * i + j * j) / s2)
    kernels = {
        "g": g,
        "g2a": (1.0 - 2.0 * i * i / s2) * g,
        "g2b": -(2.0 * i * j / s2) * g,
        "g2c": (1.0 - 2.0 * j * j / s2) * g,
    }
    for k in kernels.values():
        k.flags.writeable = False
    return FilterBank(sigma=sigma, radius=r, **kernels)


def build_filter_bank(sigma: SigmaParam | float) -> FilterBank:
    return _bank_for(as_sigma(sigma))


def _check_fits(x: np.ndarray, bank: FilterBank) -> None:
    if x.shape[0] < bank.side or x.shape[1] < bank.side:
        raise ValueError(
            f"raster {x.shape[1]}x{x.shape[0]} is smaller than the {bank.side}x{bank.side} kernel"
        )


def _correlate(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    return ndimage.correlate(x, k, mode="constant", cval=0.0)


def _correlate_adjoint(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    return ndimage.convolve(x, k, mode="constant", cval=0.0)


def responses(h: Heatmap | np.ndarray, bank: FilterBank) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = as_grid(h)
    _check_fits(x, bank)
    hp = np.maximum(x, 0.0)
    return _correlate(hp, bank.g2a), _correlate(hp, bank.g2b), _correlate(hp, bank.g2c)


class _ClosedForm(NamedTuple):
    hp: np.ndarray
    ra: np.ndarray
    rb: np.ndarray
    rc: np.ndarray
    q: np.ndarray
    c: np.ndarray


def _closed_form(x: np.ndarray, bank: FilterBank) -> _ClosedForm:
    _check_fits(x, bank)
    hp = np.maximum(x, 0.0)
    ra = _correlate(hp, bank.g2a)
    rb = _correlate(hp, bank.g2b)
    rc = _correlate(hp, bank.g2c)
    q = _correlate(hp * hp, bank.g)
    c = ra + rc + np.sqrt((ra - rc) ** 2 + 4.0 * rb * rb) - q
    return _ClosedForm(hp, ra, rb, rc, q, c)


def valid_mask(shape: Tuple[int, int], radius: int) -> np.ndarray:
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    if h > 2 * radius and w > 2 * radius:
        mask[radius:h - radius, radius:w - radius] = True
    return mask


def _reduce_half_open(angle: np.ndarray, low: float) -> np.ndarray:
    """Map angles into [low, low + pi)."""
    out = np.mod(angle - low, math.pi) + low
    out[out >= low + math.pi] -= math.pi
    return out


@dataclass(frozen=True, eq=False)
class ContournessFields:
    """Contourness c, orientation o, normal angle n (float64 grids) and the validity mask."""

    c: np.ndarray
    o: np.ndarray
    n: np.ndarray
    valid: np.ndarray
    sigma: float
    radius: int

    @property
    def C(self) -> Heatmap:
        return Heatmap(self.c)

    @property
    def O(self) -> Heatmap:  # noqa: E743
        return Heatmap(self.o)

    @property
    def N(self) -> Heatmap:
        return Heatmap(self.n)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.c.shape


def contourness_map(h: Heatmap | np.ndarray, sigma: SigmaParam | float) -> ContournessFields:
    bank = build_filter_bank(sigma)
    cf = _closed_form(as_grid(h), bank)
    o = np.arctan2(-2.0 * cf.rb, cf.rc - cf.ra) / 2.0
    o[(cf.ra == cf.rc) & (cf.rb == 0.0)] = 0.0
    o = _reduce_half_open(o, -math.pi / 2.0)
    n = _reduce_half_open(o + math.pi / 2.0, 0.0)
    return ContournessFields(
        c=cf.c,
        o=o,
        n=n,
        valid=valid_mask(cf.c.shape, bank.radius),
        sigma=bank.sigma,
        radius=bank.radius,
    )


def contourness_array(x: np.ndarray, sigma: SigmaParam | float) -> np.ndarray:
    return _closed_form(as_grid(x), build_filter_bank(sigma)).c


def contourness_vjp(h: Heatmap | np.ndarray, sigma: SigmaParam | float, grad_c: np.ndarray) -> np.ndarray:
    """Gradient of sum(grad_c * C(h)) with respect to every pixel of h."""
    bank = build_filter_bank(sigma)
    x = as_grid(h)
    cf = _closed_form(x, bank)
    g = np.asarray(grad_c, dtype=np.float64)
    diff = cf.ra - cf.rc
    root = np.sqrt(np.maximum(diff * diff + 4.0 * cf.rb * cf.rb, _ROOT_FLOOR))
    g_ra = g * (1.0 + diff / root)
    g_rc = g * (1.0 - diff / root)
    g_rb = g * (4.0 * cf.rb / root)
    grad_hp = (
        _correlate_adjoint(g_ra, bank.g2a)
        + _correlate_adjoint(g_rb, bank.g2b)
        + _correlate_adjoint(g_rc, bank.g2c)
        - 2.0 * cf.hp * _correlate_adjoint(g, bank.g)
    )
    return np.where(x > 0.0, grad_hp, 0.0)


def _window(h: Heatmap | np.ndarray, p: Point2, bank: FilterBank) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = as_grid(h)
    px, py = int(round(p.x)), int(round(p.y))
    if abs(p.x - px) > 1e-9 or abs(p.y - py) > 1e-9:
        raise ValueError(f"contourness probe needs an integer pixel, got ({p.x}, {p.y})")
    r = bank.radius
    rows, cols = x.shape
    if not (r <= px <= cols - 1 - r and r <= py <= rows - 1 - r):
        raise ValueError(f"pixel ({px}, {py}) is within {r} px of the raster border")
    win = np.maximum(x[py - r:py + r + 1, px - r:px + r + 1], 0.0)
    j, i = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    return win, i, j


def _objective(win: np.ndarray, i: np.ndarray, j: np.ndarray, bank: FilterBank, thetas: np.ndarray) -> np.ndarray:
    s2 = bank.sigma * bank.sigma
    proj = j[None] * np.cos(thetas)[:, None, None] - i[None] * np.sin(thetas)[:, None, None]
    t = 1.0 - 2.0 * proj * proj / s2
    weighted = bank.g * win
    return 2.0 * np.einsum("kij,ij->k", t, weighted) - float(np.sum(weighted * win))


def contourness_objective(h: Heatmap | np.ndarray, p: Point2, sigma: SigmaParam | float, theta: float) -> float:
    bank = build_filter_bank(sigma)
    win, i, j = _window(h, p, bank)
    return float(_objective(win, i, j, bank, np.array([theta]))[0])


def contourness_bruteforce(h: Heatmap | np.ndarray, p: Point2, sigma: SigmaParam | float, n_theta: int) -> float:
    if n_theta < 2:
        raise ValueError(f"n_theta must be >= 2, got {n_theta}")
    bank = build_filter_bank(sigma)
    win, i, j = _window(h, p, bank)
    thetas = np.arange(n_theta, dtype=np.float64) * math.pi / n_theta
    return float(_objective(win, i, j, bank, thetas).max())


@lru_cache(maxsize=32)
def _ideal_contourness(sigma: float) -> float:
    r = int(math.ceil(2.0 * sigma))
    side = 4 * r + 3
    mid = float(side // 2)
    line = Polyline(points=(Point2(0.0, mid), Point2(side - 1.0, mid)))
    h = synth_contour_heatmap(line, sigma, (side, side))
    return float(contourness_array(h.data, sigma)[side // 2, side // 2])


def ideal_contourness(sigma: SigmaParam | float) -> float:
    """C_max(sigma): contourness on an interior pixel of an ideal straight contour."""
    return _ideal_contourness(as_sigma(sigma))
