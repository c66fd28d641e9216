from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

from .geometry import LandmarkChain, Point2, Polyline, point_polyline_distance

# landmarks must lie on their contour within this distance (pixels)
LANDMARK_TOLERANCE = 1e-6


@dataclass(frozen=True)
class NamedAnchor:
    name: str
    point: Point2


@dataclass(frozen=True)
class NamedContour:
    name: str
    polyline: Polyline

    @property
    def closed(self) -> bool:
        return self.polyline.closed


@dataclass(frozen=True)
class Annotation:
    """Anchors, dense contours and optional sparse contour landmarks of one image frame."""

    image_size: Tuple[int, int]
    anchors: Tuple[NamedAnchor, ...] = ()
    contours: Tuple[NamedContour, ...] = ()
    landmarks: Mapping[str, LandmarkChain] = field(default_factory=dict)
    normalization_pair: Optional[Tuple[str, str]] = None
    parts: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "contours", tuple(self.contours))
        object.__setattr__(self, "landmarks", dict(self.landmarks))
        object.__setattr__(self, "parts", dict(self.parts))
        if self.normalization_pair is not None:
            object.__setattr__(self, "normalization_pair", tuple(self.normalization_pair))

        names = [a.name for a in self.anchors] + [c.name for c in self.contours]
        duplicated = sorted({n for n in names if names.count(n) > 1})
        if duplicated:
            raise ValueError(f"annotation names must be unique, duplicated: {duplicated}")

        contours = self.contour_map()
        for name, chain in self.landmarks.items():
            if name not in contours:
                raise KeyError(f"landmarks reference unknown contour {name!r}")
            for p in chain.points:
                d = point_polyline_distance(p, contours[name])
                if d > LANDMARK_TOLERANCE:
                    raise ValueError(f"landmark {p} is {d:.3g} px off contour {name!r}")

        if self.normalization_pair is not None:
            anchors = self.anchor_map()
            missing = [n for n in self.normalization_pair if n not in anchors]
            if missing:
                raise KeyError(f"normalization anchors missing from annotation: {missing}")

    def anchor_map(self) -> Dict[str, Point2]:
        return {a.name: a.point for a in self.anchors}

    def contour_map(self) -> Dict[str, Polyline]:
        return {c.name: c.polyline for c in self.contours}

    def part_of(self, name: str) -> str:
        return self.parts.get(name, "other")
