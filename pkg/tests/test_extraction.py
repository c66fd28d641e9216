import logging
import math

import numpy as np
import pytest

from anchor_contour.contourness import ContournessFields, contourness_map, ideal_contourness
from anchor_contour.extraction import (
    MAX_TRACE_GAP,
    Candidate,
    ContourTrace,
    ExtractionParams,
    NoAnchorError,
    extract_anchor,
    extract_contour,
    extract_stack,
    hysteresis_trace,
    nms_subpixel,
    parabola_offset,
)
from anchor_contour.geometry import Point2, Polyline, point_polyline_distance
from anchor_contour.raster import Heatmap, HeatmapStack, synth_anchor_heatmap, synth_contour_heatmap

from conftest import circle_points

PARAMS = ExtractionParams().with_defaults()


def _fields(c: np.ndarray, n: float) -> ContournessFields:
    return ContournessFields(
        c=c, o=np.zeros_like(c), n=np.full_like(c, n), valid=np.ones(c.shape, dtype=bool), sigma=3.0, radius=0
    )


def _cand(row: int, col: int, score: float) -> Candidate:
    return Candidate(Point2(float(col), float(row)), score, row, col)


def test_params_defaults_and_validation():
    c_max = ideal_contourness(3.0)
    assert PARAMS.high_threshold == pytest.approx(0.5 * c_max)
    assert PARAMS.low_threshold == pytest.approx(0.25 * c_max)
    with pytest.raises(ValueError):
        ExtractionParams(high_threshold=1.0, low_threshold=2.0)
    with pytest.raises(ValueError):
        ExtractionParams(sigma=0.0)
    with pytest.raises(ValueError):
        ExtractionParams(min_trace_length=0)


def test_low_threshold_is_checked_against_the_default_high():
    with pytest.raises(ValueError, match="exceeds"):
        ExtractionParams(low_threshold=10.0).with_defaults()
    # a default low follows an explicit high downwards
    high = 0.2 * ideal_contourness(3.0)
    assert ExtractionParams(high_threshold=high).with_defaults().low_threshold == high


def test_extract_anchor_at_integer_pixel():
    h = synth_anchor_heatmap(Point2(20.0, 30.0), 2.0, (48, 48))
    p = extract_anchor(h, 2.0)
    assert p.x == pytest.approx(20.0, abs=1e-6)
    assert p.y == pytest.approx(30.0, abs=1e-6)


def test_extract_anchor_subpixel():
    h = synth_anchor_heatmap(Point2(20.5, 30.25), 2.0, (48, 48))
    p = extract_anchor(h, 3.0)
    assert p.distance_to(Point2(20.5, 30.25)) < 0.1


def test_extract_anchor_random_positions(rng):
    # the local center of mass over the disc has a sampling bias of up to about 0.12 px
    errs = []
    for _ in range(200):
        target = Point2(*map(float, 24.0 + rng.uniform(-0.5, 0.5, 2)))
        p = extract_anchor(synth_anchor_heatmap(target, 2.0, (48, 48)), 3.0)
        errs.append(p.distance_to(target))
    errs = np.array(errs)
    assert errs.max() < 0.15
    assert errs.mean() < 0.08


def test_extract_anchor_single_pixel_and_empty():
    data = np.zeros((10, 10))
    data[3, 7] = 0.4
    assert extract_anchor(Heatmap(data), 2.0) == Point2(7.0, 3.0)
    with pytest.raises(NoAnchorError):
        extract_anchor(Heatmap(np.zeros((5, 5))), 2.0)


def test_parabola_offset():
    np.testing.assert_allclose(parabola_offset(np.array([1.0]), np.array([2.0]), np.array([1.0])), [0.0])
    np.testing.assert_allclose(parabola_offset(np.array([0.0]), np.array([1.0]), np.array([0.5])), [1.0 / 6.0])
    # flat or valley keeps the pixel
    np.testing.assert_allclose(parabola_offset(np.array([1.0]), np.array([1.0]), np.array([1.0])), [0.0])
    assert abs(parabola_offset(np.array([0.0]), np.array([1.0]), np.array([0.999]))[0]) <= 0.5


def test_nms_of_constant_field_is_empty():
    assert nms_subpixel(_fields(np.ones((12, 12)), math.pi / 2)) == []


def test_nms_of_one_pixel_ridge_keeps_one_point_per_column():
    c = np.zeros((12, 15))
    c[5, :] = 1.0
    cands = nms_subpixel(_fields(c, math.pi / 2))
    assert sorted(k.col for k in cands) == list(range(15))
    assert all(k.row == 5 for k in cands)


def test_nms_on_straight_contour_is_subpixel_accurate():
    line = Polyline.from_array([[2.0, 10.3], [62.0, 10.3]])
    fields = contourness_map(synth_contour_heatmap(line, 2.0, (64, 32)), 3.0)
    cands = [k for k in nms_subpixel(fields, PARAMS) if 12 <= k.col <= 52]
    assert cands
    assert max(abs(k.point.y - 10.3) for k in cands) < 0.1


def test_nms_refinement_stays_within_half_pixel():
    h = synth_contour_heatmap(Polyline.from_array(circle_points(32.0, 32.0, 18.0, 90), closed=True), 2.0, (64, 64))
    fields = contourness_map(h, 3.0)
    cands = nms_subpixel(fields)
    assert cands
    for k in cands:
        assert math.hypot(k.point.x - k.col, k.point.y - k.row) <= 0.5 + 1e-12


def test_hysteresis_examples():
    params = ExtractionParams(high_threshold=2.0, low_threshold=1.0)
    chain = [_cand(5, 5, 2.5), _cand(5, 6, 1.01), _cand(6, 7, 1.01)]
    traces = hysteresis_trace(chain, params)
    assert len(traces) == 1
    assert len(traces[0]) == 3
    assert traces[0].points[0] == Point2(5.0, 5.0)

    assert hysteresis_trace([_cand(1, 1, 0.5), _cand(1, 2, 0.5), _cand(1, 3, 0.5)], params) == []
    weak_only = [_cand(1, 1, 1.5), _cand(1, 2, 1.5), _cand(1, 3, 1.5)]
    assert hysteresis_trace(weak_only, params) == []


def test_hysteresis_one_trace_per_component():
    params = ExtractionParams(high_threshold=2.0, low_threshold=1.0)
    cands = [_cand(2, c, 3.0) for c in range(2, 8)] + [_cand(10, c, 3.0) for c in range(2, 6)]
    traces = hysteresis_trace(cands, params)
    assert sorted(len(t) for t in traces) == [4, 6]


def test_hysteresis_drops_short_traces():
    params = ExtractionParams(high_threshold=2.0, low_threshold=1.0, min_trace_length=3)
    assert hysteresis_trace([_cand(2, 2, 3.0), _cand(2, 3, 3.0)], params) == []


def test_trace_walk_is_ordered_from_endpoint():
    params = ExtractionParams(high_threshold=2.0, low_threshold=1.0)
    cols = [9, 4, 7, 5, 8, 6]
    traces = hysteresis_trace([_cand(3, c, 3.0) for c in cols], params)
    assert [p.x for p in traces[0].points] == [4.0, 5.0, 6.0, 7.0, 8.0, 9.0]


def test_trace_rejects_gaps():
    with pytest.raises(ValueError):
        ContourTrace(points=(Point2(0, 0), Point2(3, 0)), scores=(1.0, 1.0))
    with pytest.raises(ValueError):
        ContourTrace(points=(Point2(0, 0), Point2(1, 0)), scores=(1.0,))
    t = ContourTrace(points=(Point2(0, 0), Point2(MAX_TRACE_GAP, 0)), scores=(1.0, 1.0))
    assert not t.is_loop


def test_extract_zero_heatmap():
    assert extract_contour(Heatmap(np.zeros((32, 32))), PARAMS) == []


def _orthogonal_errors(traces, line, margin=8.0):
    a, b = line.array
    direction = (b - a) / np.hypot(*(b - a))
    errs = []
    for t in traces:
        for p in t.points:
            along = np.dot(np.array(p.as_tuple()) - a, direction)
            if margin <= along <= line.length - margin:
                errs.append(point_polyline_distance(p, line))
    return np.array(errs)


def test_round_trip_random_lines(rng):
    errs = []
    for _ in range(16):
        angle = rng.uniform(0, math.pi)
        cx, cy = 32.0 + rng.uniform(-0.5, 0.5, 2)
        d = 24.0 * np.array([math.cos(angle), math.sin(angle)])
        line = Polyline.from_array([[cx - d[0], cy - d[1]], [cx + d[0], cy + d[1]]])
        traces = extract_contour(synth_contour_heatmap(line, 2.0, (64, 64)), PARAMS)
        e = _orthogonal_errors(traces, line)
        assert e.size > 0
        errs.append(e)
    errs = np.concatenate(errs)
    assert errs.mean() < 0.15
    assert errs.max() < 0.4


def test_round_trip_circle():
    circle = circle_points(40.0, 40.0, 20.0, 180)
    h = synth_contour_heatmap(Polyline.from_array(circle, closed=True), 2.0, (80, 80))
    traces = extract_contour(h, PARAMS)
    assert traces
    pts = np.array([p.as_tuple() for t in traces for p in t.points])
    assert np.mean(np.abs(np.hypot(pts[:, 0] - 40.0, pts[:, 1] - 40.0) - 20.0)) < 0.25
    assert max(len(t) for t in traces) > 60


def test_round_trip_random_circles(rng):
    errs = []
    for _ in range(8):
        r = rng.uniform(14.0, 26.0)
        cx, cy = 40.0 + rng.uniform(-3.0, 3.0, 2)
        ring = Polyline.from_array(circle_points(cx, cy, r, 240), closed=True)
        traces = extract_contour(synth_contour_heatmap(ring, 2.0, (80, 80)), PARAMS)
        pts = np.array([p.as_tuple() for t in traces for p in t.points])
        assert len(pts) > 2 * math.pi * r * 0.6
        errs.append(np.abs(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - r))
    errs = np.concatenate(errs)
    assert errs.mean() < 0.25
    assert errs.max() < 0.5


def test_two_parallel_lines_give_separate_traces():
    h = np.maximum(
        synth_contour_heatmap(Polyline.from_array([[6.0, 20.0], [58.0, 20.0]]), 2.0, (64, 64)).data,
        synth_contour_heatmap(Polyline.from_array([[6.0, 40.0], [58.0, 40.0]]), 2.0, (64, 64)).data,
    )
    traces = sorted(extract_contour(Heatmap(h), PARAMS), key=len, reverse=True)
    assert len(traces) >= 2
    rows = sorted(round(np.mean([p.y for p in t.points])) for t in traces[:2])
    assert rows == [20, 40]
    for t in traces:
        ys = {round(p.y) for p in t.points}
        assert ys <= set(range(17, 24)) or ys <= set(range(37, 44))


def test_thresholds_are_monotone():
    h = synth_contour_heatmap(Polyline.from_array(circle_points(32.0, 32.0, 16.0, 120), closed=True), 2.0, (64, 64))
    fields = contourness_map(h, 3.0)
    cands = nms_subpixel(fields)
    base = hysteresis_trace(cands, PARAMS)
    higher_low = hysteresis_trace(cands, ExtractionParams(
        high_threshold=PARAMS.high_threshold, low_threshold=0.45 * ideal_contourness(3.0)))
    higher_high = hysteresis_trace(cands, ExtractionParams(
        high_threshold=0.9 * ideal_contourness(3.0), low_threshold=PARAMS.low_threshold))
    assert sum(map(len, higher_low)) <= sum(map(len, base))
    assert len(higher_high) <= len(base)


def test_extract_stack_skips_empty_anchor(caplog):
    anchor = synth_anchor_heatmap(Point2(10.0, 12.0), 2.0, (32, 32))
    line = synth_contour_heatmap(Polyline.from_array([[4.0, 20.0], [28.0, 20.0]]), 2.0, (32, 32))
    stack = HeatmapStack(
        channels=(anchor, Heatmap.zeros((32, 32)), line),
        names=("anchor:a", "anchor:b", "contour:c"),
    )
    with caplog.at_level(logging.WARNING):
        anchors, traces = extract_stack(stack, ExtractionParams(), threads=2)
    assert set(anchors) == {"a"}
    assert anchors["a"].distance_to(Point2(10.0, 12.0)) < 1e-6
    assert list(traces) == ["c"]
    assert "anchor:b" in caplog.text
