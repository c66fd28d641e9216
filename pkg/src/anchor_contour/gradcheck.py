"""Central finite-difference validation of the analytic loss gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .losses import loss_gradient, loss_value

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    n_checked: int
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.rtol

    def to_dict(self) -> dict:
        return {
            "max_relative_error": self.max_relative_error,
            "n_checked": self.n_checked,
            "rtol": self.rtol,
            "passed": self.passed,
        }


def numeric_gradient(
    func: Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float = 1e-3,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """(f(x + h) - f(x - h)) / 2h for every flat index of x, or only the given ones (others stay NaN)."""
    work = np.array(x, dtype=np.float64)
    flat = work.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + step
        right = func(work)
        flat[i] = old - step
        left = func(work)
        flat[i] = old
        out[i] = (right - left) / (2.0 * step)
    return out.reshape(work.shape)


def compare_gradients(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rtol: float = 1e-3,
    min_magnitude: float = 1e-6,
) -> GradCheckResult:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    checked = ~np.isnan(n) & (np.abs(a) > min_magnitude)
    if not np.any(checked):
        return GradCheckResult(max_relative_error=0.0, n_checked=0, rtol=rtol)
    a, n = a[checked], n[checked]
    rel = np.abs(a - n) / np.maximum(np.abs(a), np.abs(n))
    return GradCheckResult(max_relative_error=float(rel.max()), n_checked=int(checked.sum()), rtol=rtol)


def check_loss_gradient(
    kind: str,
    pred: np.ndarray,
    *,
    gt: Optional[np.ndarray] = None,
    args: Sequence = (),
    kwargs: Optional[dict] = None,
    indices: Optional[Sequence[int]] = None,
    step: float = 1e-3,
    rtol: float = 1e-3,
    min_magnitude: float = 1e-6,
) -> GradCheckResult:
    """
    Compare ``loss_gradient(kind, ...)`` with central differences in pred.

    ``full`` takes ``gt`` and is called as ``(gt, pred, *args)``; the weak kinds
    are called as ``(pred, *args)``.
    """
    kwargs = kwargs or {}
    x = np.array(pred, dtype=np.float64)

    def call(fn, p):
        if kind == "full":
            return fn(kind, gt, p, *args, **kwargs)
        return fn(kind, p, *args, **kwargs)

    analytic = call(loss_gradient, x)
    numeric = numeric_gradient(lambda p: call(loss_value, p), x, step=step, indices=indices)
    if indices is not None:
        mask = np.zeros(x.size, dtype=bool)
        mask[list(indices)] = True
        analytic = np.where(mask.reshape(x.shape), analytic, 0.0)
    result = compare_gradients(analytic, numeric, rtol=rtol, min_magnitude=min_magnitude)
    log.debug("gradient check %s: %s", kind, result)
    return result
