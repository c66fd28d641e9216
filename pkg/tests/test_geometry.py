import math

import numpy as np
import pytest

from anchor_contour.geometry import (
    LandmarkChain,
    Point2,
    Polyline,
    Segment,
    closest_points_on_polyline,
    line_contour,
    point_polyline_distance,
    point_segment_distance,
    polyline_normal_at,
    resample_polyline,
    sample_arclengths,
    spline_contour,
)

from conftest import circle_points


def test_point_segment_distance_examples():
    assert point_segment_distance(Point2(0, 0), Segment(Point2(0, -1), Point2(0, 1))) == 0.0
    assert point_segment_distance(Point2(3, 4), Segment(Point2(0, 0), Point2(0, 0.001))) == pytest.approx(5.0, abs=1e-3)
    assert point_segment_distance(Point2(5, 2), Segment(Point2(0, 0), Point2(10, 0))) == pytest.approx(2.0)


def test_zero_length_segment_is_rejected():
    with pytest.raises(ValueError):
        Segment(Point2(1, 1), Point2(1, 1))


def test_polyline_validation():
    with pytest.raises(ValueError):
        Polyline.from_array([[0.0, 0.0]])
    with pytest.raises(ValueError):
        Polyline.from_array([[0.0, 0.0], [1.0, 0.0]], closed=True)
    with pytest.raises(ValueError):
        Polyline(points=(Point2(0, 0), Point2(0, 0), Point2(1, 0)))
    with pytest.raises(ValueError):
        Point2(float("nan"), 0.0)


def test_point_polyline_distance_examples():
    c = Polyline.from_array([[0.0, 0.0], [10.0, 0.0]])
    assert point_polyline_distance(Point2(5, 3), c) == pytest.approx(3.0)
    assert point_polyline_distance(Point2(10, 0), c) == 0.0


def test_point_polyline_distance_matches_per_segment_minimum(rng):
    c = Polyline.from_array(rng.uniform(0, 50, size=(21, 2)))
    for p in rng.uniform(-10, 60, size=(30, 2)):
        q = Point2(*p)
        brute = min(point_segment_distance(q, s) for s in c.segments())
        assert point_polyline_distance(q, c) == pytest.approx(brute, abs=1e-9)


def test_distance_is_rigid_motion_invariant(rng):
    pts = rng.uniform(0, 40, size=(8, 2))
    p = rng.uniform(0, 40, size=2)
    angle, shift = 0.7, np.array([13.0, -4.0])
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    before = point_polyline_distance(Point2(*p), Polyline.from_array(pts))
    after = point_polyline_distance(Point2(*(rot @ p + shift)), Polyline.from_array(pts @ rot.T + shift))
    assert after == pytest.approx(before, abs=1e-9)


def test_closed_polyline_includes_closing_segment():
    square = Polyline.from_array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]], closed=True)
    assert square.length == pytest.approx(16.0)
    assert point_polyline_distance(Point2(-1.0, 2.0), square) == pytest.approx(1.0)


def test_closest_points_on_polyline():
    c = Polyline.from_array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    feet = closest_points_on_polyline(np.array([[5.0, 2.0], [12.0, 5.0]]), c)
    np.testing.assert_allclose(feet, [[5.0, 0.0], [10.0, 5.0]])


def test_normal_of_horizontal_segment():
    nx, ny = polyline_normal_at(Polyline.from_array([[0.0, 0.0], [10.0, 0.0]]), 3.0)
    assert abs(nx) == pytest.approx(0.0, abs=1e-12)
    assert abs(ny) == pytest.approx(1.0)


def test_normal_at_right_angle_vertex_is_bisector_perpendicular():
    c = Polyline.from_array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    nx, ny = polyline_normal_at(c, 1.0)
    # tangent bisector of (1,0) and (0,1) is (1,1)/sqrt(2)
    assert nx + ny == pytest.approx(0.0, abs=1e-12)
    assert math.hypot(nx, ny) == pytest.approx(1.0)


def test_normals_of_circle_are_radial():
    c = Polyline.from_array(circle_points(0.0, 0.0, 50.0, 64), closed=True)
    for p, (nx, ny) in resample_polyline(c, 3.0):
        radial = math.atan2(p.y, p.x)
        diff = (math.atan2(ny, nx) - radial) % math.pi
        assert min(diff, math.pi - diff) < 0.05


def test_normal_out_of_range():
    with pytest.raises(ValueError):
        polyline_normal_at(Polyline.from_array([[0.0, 0.0], [1.0, 0.0]]), 2.0)


@pytest.mark.parametrize(
    "total, spacing, closed, expected",
    [(10.0, 1.0, False, 11), (4.0, 0.5, True, 8), (10.4, 1.0, False, 12)],
)
def test_sample_arclength_counts(total, spacing, closed, expected):
    assert len(sample_arclengths(total, spacing, closed)) == expected


def test_sample_arclengths_ends_exactly_at_total():
    s = sample_arclengths(10.4, 1.0, False)
    np.testing.assert_allclose(s[:11], np.arange(11.0))
    assert s[-1] == 10.4


def test_line_contour_of_two_landmarks():
    c = line_contour(LandmarkChain.from_array([[0.0, 0.0], [3.0, 4.0]]))
    assert len(c.segments()) == 1
    assert c.length == pytest.approx(5.0)


def _max_circle_deviation(c: Polyline, r: float) -> float:
    dense = np.array([p.as_tuple() for p, _ in resample_polyline(c, 0.05)])
    return float(np.max(np.abs(np.hypot(dense[:, 0], dense[:, 1]) - r)))


def test_line_contour_sagitta_on_circle():
    chain = LandmarkChain.from_array(circle_points(0.0, 0.0, 100.0, 16), closed=True)
    dev = _max_circle_deviation(line_contour(chain), 100.0)
    assert dev == pytest.approx(100.0 * (1.0 - math.cos(math.pi / 16)), abs=1e-3)
    assert dev == pytest.approx(1.921, abs=1e-3)


def test_spline_contour_beats_line_contour_on_circle():
    chain = LandmarkChain.from_array(circle_points(0.0, 0.0, 100.0, 16), closed=True)
    spline = spline_contour(chain)
    assert spline.closed
    assert _max_circle_deviation(spline, 100.0) < 1.921


def test_spline_contour_interpolates_landmarks():
    chain = LandmarkChain.from_array([[0.0, 0.0], [10.0, 4.0], [20.0, 3.0], [30.0, -2.0]])
    spline = spline_contour(chain)
    for p in chain.points:
        assert point_polyline_distance(p, spline) < 1e-9


def test_spline_of_collinear_landmarks_is_straight():
    chain = LandmarkChain.from_array([[0.0, 5.0], [7.0, 5.0], [20.0, 5.0]])
    ys = spline_contour(chain).array[:, 1]
    np.testing.assert_allclose(ys, 5.0, atol=1e-6)


def test_spline_needs_three_landmarks():
    with pytest.raises(ValueError):
        spline_contour(LandmarkChain.from_array([[0.0, 0.0], [1.0, 1.0]]))
