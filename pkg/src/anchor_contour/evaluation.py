"""
NME over anchors and contours, cumulative error distribution and its AUC.

Anchor landmarks are scored point to point against the predicted anchor of the
same name. Contour landmarks are scored by their distance to the nearest
predicted polyline of the same contour, so a prediction is never penalized for
sliding along the curve. Errors are normalized by the distance between the two
normalization anchors (the outer eye corners for faces).
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .annotation import Annotation
from .geometry import Point2, Polyline, distances_to_polyline, line_contour, resample_arrays, spline_contour
from .synthscene import sample_landmarks

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 6.0
DEFAULT_GT_SPACING = 2.0


@dataclass(frozen=True)
class GroundTruthLandmarks:
    anchor_landmarks: Mapping[str, Point2]
    contour_landmark_groups: Mapping[str, Tuple[Point2, ...]]
    normalization_pair: Tuple[str, str]
    part_labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchor_landmarks", dict(self.anchor_landmarks))
        object.__setattr__(
            self, "contour_landmark_groups", {k: tuple(v) for k, v in self.contour_landmark_groups.items()}
        )
        object.__setattr__(self, "normalization_pair", tuple(self.normalization_pair))
        object.__setattr__(self, "part_labels", dict(self.part_labels))
        shared = set(self.anchor_landmarks) & set(self.contour_landmark_groups)
        if shared:
            raise ValueError(f"names used both as anchor and contour group: {sorted(shared)}")
        missing = [n for n in self.normalization_pair if n not in self.anchor_landmarks]
        if missing:
            raise KeyError(f"normalization anchors missing from ground truth: {missing}")

    def part_of(self, name: str) -> str:
        return self.part_labels.get(name, "other")

    def normalization(self) -> float:
        a, b = (self.anchor_landmarks[n] for n in self.normalization_pair)
        d = a.distance_to(b)
        if d == 0.0:
            raise ValueError(f"normalization anchors {self.normalization_pair} coincide")
        return d


@dataclass(frozen=True)
class Prediction:
    anchors: Mapping[str, Point2] = field(default_factory=dict)
    contours: Mapping[str, Tuple[Polyline, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", dict(self.anchors))
        object.__setattr__(self, "contours", {k: tuple(v) for k, v in self.contours.items()})

    @classmethod
    def from_extraction(cls, anchors: Mapping[str, Point2], traces: Mapping[str, Sequence]) -> "Prediction":
        contours: Dict[str, List[Polyline]] = {}
        for name, items in traces.items():
            lines = []
            for t in items:
                try:
                    lines.append(t.to_polyline())
                except ValueError:
                    log.debug("contour %s: dropping degenerate trace of %d points", name, len(t))
            contours[name] = lines
        return cls(anchors=anchors, contours=contours)


@dataclass(frozen=True)
class LandmarkError:
    owner: str
    role: str  # "anchor" or "contour"
    part: str
    error: float
    missing: bool = False


@dataclass(frozen=True)
class EvalReport:
    per_landmark_errors: Tuple[LandmarkError, ...]
    nme_overall: float
    nme_per_part: Mapping[str, float]
    ced: Tuple[Tuple[float, float], ...]
    auc: float
    cutoff: float
    face_nmes: Tuple[float, ...] = ()
    missing: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "nme_overall": self.nme_overall,
            "nme_per_part": dict(sorted(self.nme_per_part.items())),
            "auc": self.auc,
            "cutoff": self.cutoff,
            "ced": [list(p) for p in self.ced],
            "face_nmes": list(self.face_nmes),
            "missing": list(self.missing),
            "per_landmark_errors": [
                {"owner": e.owner, "role": e.role, "part": e.part, "error": e.error, "missing": e.missing}
                for e in self.per_landmark_errors
            ],
        }


def landmark_error(
    l: Point2, gt_role: Tuple[str, str], pred: Prediction, missing_penalty: Optional[float] = None
) -> float:
    """
    Error of one GT landmark; ``gt_role`` is ("anchor", name) or ("contour", name).
    Without a matching prediction the penalty is returned, or KeyError raised if none is given.
    """
    role, name = gt_role
    if role == "anchor":
        if name in pred.anchors:
            return l.distance_to(pred.anchors[name])
    elif role == "contour":
        lines = pred.contours.get(name, ())
        if lines:
            return float(_contour_errors(np.array([l.as_tuple()]), lines)[0])
    else:
        raise ValueError(f"unknown landmark role {role!r}")
    if missing_penalty is None:
        raise KeyError(f"no predicted {role} named {name!r}")
    return missing_penalty


def _contour_errors(xy: np.ndarray, lines: Sequence[Polyline]) -> np.ndarray:
    return np.min([distances_to_polyline(xy, c) for c in lines], axis=0)


def _excluded(name: str, part: str, exclude: Collection[str]) -> bool:
    return name in exclude or part in exclude


def _face_errors(
    gt: GroundTruthLandmarks, pred: Prediction, penalty: float, exclude: Collection[str]
) -> Tuple[List[LandmarkError], List[str]]:
    errors: List[LandmarkError] = []
    missing: List[str] = []
    for name, point in gt.anchor_landmarks.items():
        part = gt.part_of(name)
        if _excluded(name, part, exclude):
            continue
        found = name in pred.anchors
        err = point.distance_to(pred.anchors[name]) if found else penalty
        if not found:
            missing.append(name)
        errors.append(LandmarkError(name, "anchor", part, err, not found))

    for name, points in gt.contour_landmark_groups.items():
        part = gt.part_of(name)
        if _excluded(name, part, exclude) or not points:
            continue
        lines = pred.contours.get(name, ())
        if lines:
            dist = _contour_errors(np.array([p.as_tuple() for p in points]), lines)
            errors.extend(LandmarkError(name, "contour", part, float(e)) for e in dist)
        else:
            missing.append(name)
            errors.extend(LandmarkError(name, "contour", part, penalty, True) for _ in points)
    return errors, missing


def _nme(errors: Iterable[LandmarkError], d: float) -> float:
    values = [e.error for e in errors]
    return 100.0 * float(np.mean(values)) / d if values else 0.0


def _per_part(errors: Sequence[LandmarkError], d: float) -> Dict[str, float]:
    parts = sorted({e.part for e in errors})
    return {p: _nme([e for e in errors if e.part == p], d) for p in parts}


def nme_ac(
    gt: GroundTruthLandmarks,
    pred: Prediction,
    cutoff: float = DEFAULT_CUTOFF,
    exclude: Collection[str] = (),
) -> EvalReport:
    d = gt.normalization()
    penalty = cutoff * d / 100.0
    errors, missing = _face_errors(gt, pred, penalty, frozenset(exclude))
    if missing:
        log.info("missing predictions scored at the cutoff: %s", ", ".join(missing))
    overall = _nme(errors, d)
    ced, auc = ced_auc([overall], cutoff)
    return EvalReport(
        per_landmark_errors=tuple(errors),
        nme_overall=overall,
        nme_per_part=_per_part(errors, d),
        ced=ced,
        auc=auc,
        cutoff=cutoff,
        face_nmes=(overall,),
        missing=tuple(missing),
    )


def ced_auc(errors: Sequence[float], cutoff: float = DEFAULT_CUTOFF):
    """
    Empirical CDF of per-face NME as (nme, fraction <= nme) pairs, and the
    area under it over [0, cutoff] in percent of the full box.
    """
    if not (math.isfinite(cutoff) and cutoff > 0):
        raise ValueError(f"cutoff must be > 0, got {cutoff}")
    e = np.sort(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        raise ValueError("CED of an empty error list is undefined")
    n = e.size
    ced = tuple((float(v), (i + 1) / n) for i, v in enumerate(e))

    xs, ys = [0.0], [0.0]
    for i, v in enumerate(e):
        # faces at or beyond the cutoff never count
        if v >= cutoff:
            break
        xs += [v, v]
        ys += [i / n, (i + 1) / n]
    xs.append(cutoff)
    ys.append(ys[-1])
    auc = float(np.trapezoid(ys, xs)) / cutoff * 100.0
    return ced, min(100.0, max(0.0, auc))


def evaluate_dataset(
    pairs: Iterable[Tuple[GroundTruthLandmarks, Prediction]],
    cutoff: float = DEFAULT_CUTOFF,
    exclude: Collection[str] = (),
    threads: int = 1,
) -> EvalReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_dataset needs at least one face")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        faces = list(pool.map(lambda gp: nme_ac(gp[0], gp[1], cutoff, exclude), pairs))

    face_nmes = [f.nme_overall for f in faces]
    ced, auc = ced_auc(face_nmes, cutoff)
    parts = sorted({p for f in faces for p in f.nme_per_part})
    per_part = {
        p: float(np.mean([f.nme_per_part[p] for f in faces if p in f.nme_per_part])) for p in parts
    }
    return EvalReport(
        per_landmark_errors=tuple(e for f in faces for e in f.per_landmark_errors),
        nme_overall=float(np.mean(face_nmes)),
        nme_per_part=per_part,
        ced=ced,
        auc=auc,
        cutoff=cutoff,
        face_nmes=tuple(face_nmes),
        missing=tuple(m for f in faces for m in f.missing),
    )


def gt_from_annotation(annotation: Annotation, spacing: float = DEFAULT_GT_SPACING) -> GroundTruthLandmarks:
    """Dense GT: every anchor plus each contour resampled at ``spacing`` px of arc length."""
    if annotation.normalization_pair is None:
        raise ValueError("annotation has no normalization_pair")
    groups = {}
    for c in annotation.contours:
        pos, _ = resample_arrays(c.polyline, spacing)
        groups[c.name] = tuple(Point2(float(x), float(y)) for x, y in pos)
    return GroundTruthLandmarks(
        anchor_landmarks=annotation.anchor_map(),
        contour_landmark_groups=groups,
        normalization_pair=annotation.normalization_pair,
        part_labels=annotation.parts,
    )


CONTOUR_BUILDERS = {"line": line_contour, "spline": spline_contour}


def prediction_from_landmarks(annotation: Annotation, k: Optional[int], kind: str = "line") -> Prediction:
    """
    Contours rebuilt from sparse landmarks: ``k`` uniform samples per contour, or
    the annotation's own landmark chains when ``k`` is None. Anchors are exact.
    """
    try:
        build = CONTOUR_BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown contour construction {kind!r}, expected line or spline") from None
    contours = {}
    for c in annotation.contours:
        if k is None:
            if c.name not in annotation.landmarks:
                raise KeyError(f"annotation has no landmarks for contour {c.name!r}")
            chain = annotation.landmarks[c.name]
        else:
            chain = sample_landmarks(c.polyline, k)
        if kind == "spline" and len(chain) < 3:
            contours[c.name] = (line_contour(chain),)
        else:
            contours[c.name] = (build(chain),)
    return Prediction(anchors=annotation.anchor_map(), contours=contours)


def write_ced_csv(report: EvalReport, path: Path | str) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["nme", "fraction"])
        for nme, frac in report.ced:
            writer.writerow([f"{nme:.9g}", f"{frac:.9g}"])
    return path


def plot_ced(reports: Mapping[str, EvalReport], path: Path | str) -> Path:
    """Step plot of each report's CED up to its cutoff."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for label, report in reports.items():
        xs = [0.0] + [e for e, _ in report.ced] + [report.cutoff]
        ys = [0.0] + [f for _, f in report.ced] + [report.ced[-1][1]]
        ax.step(xs, ys, where="post", label=f"{label} (AUC {report.auc:.1f})")
    cutoff = max(r.cutoff for r in reports.values())
    ax.set_xlim(0.0, cutoff)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("NME (%)")
    ax.set_ylabel("fraction of faces")
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
