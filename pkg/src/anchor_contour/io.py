"""
File formats.

ACH heatmap stacks (all integers unsigned 32-bit little-endian)::

    offset 0   b"ACHM"
    offset 4   version (1)
    offset 8   width
    offset 12  height
    offset 16  channels
    offset 20  channel names, each a u32 byte length followed by UTF-8 bytes
    then       channels x height x width float32 little-endian, channel-major, row-major

JSON documents (annotations, traces, reports, loss breakdowns) are written with
sorted keys, two-space indent and every float rounded to 9 significant digits,
so the same content always produces the same bytes.

PGM export is 16-bit binary. The header is the ASCII line ``P5``, the line
``<width> <height>`` (one space) and the line ``65535``, each ended by a single
newline byte, followed by big-endian u16 samples row by row. Values go through
the affine map min -> 0, max -> 65535 and a constant heatmap maps to all zeros.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .annotation import Annotation, NamedAnchor, NamedContour
from .extraction import ContourTrace
from .geometry import LandmarkChain, Point2, Polyline, closest_points_on_polyline
from .raster import Heatmap, HeatmapStack

log = logging.getLogger(__name__)

_SNAP_DISTANCE = 1e-4

ACH_MAGIC = b"ACHM"
ACH_VERSION = 1
_U32 = struct.Struct("<I")
_HEADER = struct.Struct("<4sIIII")


class AchFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_ach(stack: HeatmapStack) -> bytes:
    w, h = stack.size
    parts = [_HEADER.pack(ACH_MAGIC, ACH_VERSION, w, h, len(stack))]
    for name in stack.names:
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    parts.append(stack.as_array().astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def read_ach(data: bytes) -> HeatmapStack:
    if len(data) < _HEADER.size:
        raise AchFormatError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, w, h, n = _HEADER.unpack_from(data, 0)
    if magic != ACH_MAGIC:
        raise AchFormatError(f"bad magic {magic!r}, expected {ACH_MAGIC!r}", 0)
    if version != ACH_VERSION:
        raise AchFormatError(f"unsupported version {version}", 4)
    if n > 0 and (w == 0 or h == 0):
        raise AchFormatError(f"empty raster {w}x{h} with {n} channels", 8)

    offset = _HEADER.size
    names: List[str] = []
    for _ in range(n):
        if offset + _U32.size > len(data):
            raise AchFormatError("truncated channel-name length", offset)
        (length,) = _U32.unpack_from(data, offset)
        start = offset + _U32.size
        if start + length > len(data):
            raise AchFormatError(f"truncated channel name of {length} bytes", start)
        try:
            names.append(data[start:start + length].decode("utf-8"))
        except UnicodeDecodeError as e:
            raise AchFormatError("channel name is not valid UTF-8", start) from e
        offset = start + length

    expected = n * w * h * 4
    available = len(data) - offset
    if available < expected:
        raise AchFormatError(f"truncated payload: {available} of {expected} bytes", offset)
    if available > expected:
        raise AchFormatError(f"{available - expected} trailing bytes after payload", offset + expected)
    arr = np.frombuffer(data, dtype="<f4", count=n * w * h, offset=offset).reshape(n, h, w)
    if not np.all(np.isfinite(arr)):
        raise AchFormatError("payload holds non-finite values", offset)
    if n == 0:
        return HeatmapStack(channels=())
    try:
        return HeatmapStack.from_array(arr.astype(np.float32), names)
    except ValueError as e:
        raise AchFormatError(str(e), _HEADER.size) from e


def save_ach(stack: HeatmapStack, path: Path | str) -> Path:
    path = Path(path)
    path.write_bytes(write_ach(stack))
    return path


def load_ach(path: Path | str) -> HeatmapStack:
    stack = read_ach(Path(path).read_bytes())
    log.debug("loaded %d channels from %s", len(stack), path)
    return stack


# -- JSON --------------------------------------------------------------------------------------


def round_floats(obj: Any) -> Any:
    """Round every float to 9 significant digits, recursively."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"cannot serialize non-finite value {v}")
        return float(f"{v:.9g}")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Mapping):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [round_floats(v) for v in obj]
    raise TypeError(f"Not JSON serializable: {type(obj)}")


def dumps(obj: Any) -> str:
    return json.dumps(round_floats(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(obj: Any, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path: Path | str) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON: {e}") from e


def _xy(p: Point2) -> List[float]:
    return [p.x, p.y]


def _points(raw: Sequence, where: str) -> Tuple[Point2, ...]:
    try:
        return tuple(Point2(float(x), float(y)) for x, y in raw)
    except (TypeError, ValueError) as e:
        raise ValueError(f"{where}: points must be finite [x, y] pairs") from e


def annotation_to_dict(a: Annotation) -> Dict[str, Any]:
    closed = {c.name: c.closed for c in a.contours}
    doc: Dict[str, Any] = {
        "image_size": list(a.image_size),
        "anchors": [{"name": n.name, "x": n.point.x, "y": n.point.y} for n in a.anchors],
        "contours": [
            {"name": c.name, "closed": c.closed, "points": [_xy(p) for p in c.polyline.points]}
            for c in a.contours
        ],
        "landmarks": [
            {"contour": name, "points": [_xy(p) for p in chain.points]}
            for name, chain in a.landmarks.items()
            if name in closed
        ],
        "parts": dict(a.parts),
    }
    if a.normalization_pair is not None:
        doc["normalization_pair"] = list(a.normalization_pair)
    return doc


def _snap(pts: Tuple[Point2, ...], line: Polyline) -> Tuple[Point2, ...]:
    # rounding to 9 significant digits can move a landmark slightly off its contour
    xy = np.array([p.as_tuple() for p in pts])
    feet = closest_points_on_polyline(xy, line)
    off = np.hypot(*(xy - feet).T)
    return tuple(
        Point2(float(fx), float(fy)) if d <= _SNAP_DISTANCE else p
        for p, (fx, fy), d in zip(pts, feet, off)
    )


def annotation_from_dict(doc: Mapping[str, Any]) -> Annotation:
    try:
        size = doc["image_size"]
        anchors = tuple(
            NamedAnchor(str(d["name"]), Point2(float(d["x"]), float(d["y"]))) for d in doc.get("anchors", [])
        )
        contours = tuple(
            NamedContour(
                str(d["name"]),
                Polyline(points=_points(d["points"], f"contour {d['name']}"), closed=bool(d.get("closed", False))),
            )
            for d in doc.get("contours", [])
        )
        by_name = {c.name: c.polyline for c in contours}
        landmarks = {}
        for d in doc.get("landmarks", []):
            name = str(d["contour"])
            pts = _points(d["points"], f"landmarks of {name}")
            line = by_name.get(name)
            if line is not None and pts:
                pts = _snap(pts, line)
            closed = line is not None and line.closed and len(pts) >= 3
            landmarks[name] = LandmarkChain(points=pts, closed=closed)
        pair = doc.get("normalization_pair")
    except KeyError as e:
        raise ValueError(f"annotation document is missing field {e}") from e
    return Annotation(
        image_size=(int(size[0]), int(size[1])),
        anchors=anchors,
        contours=contours,
        landmarks=landmarks,
        normalization_pair=tuple(pair) if pair else None,
        parts=dict(doc.get("parts", {})),
    )


def write_annotation(a: Annotation, path: Path | str) -> Path:
    return write_json(annotation_to_dict(a), path)


def read_annotation(path: Path | str) -> Annotation:
    return annotation_from_dict(read_json(path))


def traces_to_dict(
    anchors: Mapping[str, Point2],
    traces: Mapping[str, Sequence[ContourTrace]],
    params: Mapping[str, Any],
) -> Dict[str, Any]:
    return {
        "params": dict(params),
        "anchors": {name: _xy(p) for name, p in anchors.items()},
        "channels": {
            name: [{"points": [_xy(p) for p in t.points], "scores": list(t.scores)} for t in items]
            for name, items in traces.items()
        },
    }


def traces_from_dict(doc: Mapping[str, Any]):
    """Inverse of ``traces_to_dict``: (anchors, traces per contour, params)."""
    try:
        anchors = {name: Point2(float(x), float(y)) for name, (x, y) in doc.get("anchors", {}).items()}
        traces = {
            name: [ContourTrace(points=_points(t["points"], f"trace of {name}"), scores=t["scores"]) for t in items]
            for name, items in doc.get("channels", {}).items()
        }
    except KeyError as e:
        raise ValueError(f"trace document is missing field {e}") from e
    return anchors, traces, dict(doc.get("params", {}))


def write_traces(anchors, traces, params, path: Path | str) -> Path:
    return write_json(traces_to_dict(anchors, traces, params), path)


def read_traces(path: Path | str):
    return traces_from_dict(read_json(path))


def pgm_bytes(h: Heatmap) -> bytes:
    x = h.as_float64()
    lo, hi = float(x.min()), float(x.max())
    if hi > lo:
        scaled = np.rint((x - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(x)
    header = f"P5\n{h.width} {h.height}\n65535\n".encode("ascii")
    return header + scaled.astype(">u2").tobytes(order="C")


def export_pgm(h: Heatmap, path: Path | str) -> Path:
    path = Path(path)
    path.write_bytes(pgm_bytes(h))
    return path
