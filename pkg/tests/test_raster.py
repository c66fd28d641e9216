import math

import numpy as np
import pytest

from anchor_contour.geometry import Point2, Polyline, point_polyline_distance
from anchor_contour.raster import (
    Heatmap,
    HeatmapStack,
    SigmaParam,
    bilinear_array,
    bilinear_sample,
    bilinear_scatter,
    split_channel_name,
    stack_max,
    synth_anchor_heatmap,
    synth_contour_heatmap,
    synth_stack,
)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        SigmaParam(0.0)
    with pytest.raises(ValueError):
        synth_anchor_heatmap(Point2(1, 1), -1.0, (8, 8))


def test_heatmap_rejects_bad_data():
    with pytest.raises(ValueError):
        Heatmap(np.zeros(4))
    with pytest.raises(ValueError):
        Heatmap(np.full((2, 2), np.inf))


def test_anchor_heatmap_values():
    sigma = 2.0
    h = synth_anchor_heatmap(Point2(5.0, 6.0), sigma, (16, 12))
    assert h.size == (16, 12)
    assert h.data[6, 5] == pytest.approx(1.0)
    # one pixel right is distance 1 = sigma / 2
    assert h.data[6, 6] == pytest.approx(0.5)
    assert h.data.min() >= 0.0


def test_anchor_heatmap_zero_crossing():
    sigma = 2.0 * math.sqrt(2.0)
    h = synth_anchor_heatmap(Point2(4.0, 4.0), sigma, (12, 12))
    # distance 2 = sigma / sqrt(2)
    assert h.data[4, 6] == pytest.approx(0.0, abs=1e-6)


def test_contour_heatmap_values(horizontal_line):
    h = synth_contour_heatmap(horizontal_line, 2.0, (64, 64))
    assert h.data[32, 30] == pytest.approx(1.0)
    assert h.data[33, 30] == pytest.approx(0.5)
    assert h.data[20, 30] == 0.0


def test_contour_heatmap_matches_brute_force(rng):
    c = Polyline.from_array(rng.uniform(3, 20, size=(5, 2)))
    sigma = 2.5
    h = synth_contour_heatmap(c, sigma, (24, 24))
    expected = np.zeros((24, 24))
    for y in range(24):
        for x in range(24):
            d = point_polyline_distance(Point2(float(x), float(y)), c)
            expected[y, x] = max(0.0, 1.0 - 2.0 * d * d / (sigma * sigma))
    np.testing.assert_allclose(h.data, expected.astype(np.float32), atol=1e-6)


def test_synthesis_is_translation_equivariant():
    a = synth_contour_heatmap(Polyline.from_array([[10.0, 10.0], [30.0, 18.0]]), 2.0, (48, 48)).data
    b = synth_contour_heatmap(Polyline.from_array([[13.0, 15.0], [33.0, 23.0]]), 2.0, (48, 48)).data
    np.testing.assert_array_equal(a[10:40, 10:40], b[15:45, 13:43])


def test_bilinear_sample():
    h = Heatmap(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert bilinear_sample(h, Point2(0.5, 0.5)) == pytest.approx(0.5)
    assert bilinear_sample(h, Point2(1.0, 1.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bilinear_sample(h, Point2(1.5, 0.0))


def test_bilinear_constant_heatmap(rng):
    grid = np.full((6, 7), 0.25)
    xs, ys = rng.uniform(0, 6, 20), rng.uniform(0, 5, 20)
    np.testing.assert_allclose(bilinear_array(grid, xs, ys), 0.25)


def test_bilinear_scatter_is_adjoint(rng):
    grid = rng.normal(size=(9, 11))
    xs, ys, v = rng.uniform(0, 10, 15), rng.uniform(0, 8, 15), rng.normal(size=15)
    lhs = float(np.dot(bilinear_array(grid, xs, ys), v))
    rhs = float(np.sum(grid * bilinear_scatter(grid.shape, xs, ys, v)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_stack_order_and_names(simple_annotation):
    stack = synth_stack(simple_annotation, 2.0)
    assert stack.names == ("anchor:right_eye_outer_corner", "anchor:left_eye_outer_corner", "contour:upper_lip")
    assert split_channel_name(stack.names[-1]) == ("contour", "upper_lip")
    assert stack["anchor:left_eye_outer_corner"].data[20, 52] == pytest.approx(1.0)
    with pytest.raises(KeyError):
        stack["contour:missing"]


def test_stack_is_identical_for_any_thread_count(simple_annotation):
    one = synth_stack(simple_annotation, 2.0, threads=1).as_array()
    four = synth_stack(simple_annotation, 2.0, threads=4).as_array()
    np.testing.assert_array_equal(one, four)


def test_stack_rejects_mixed_sizes():
    with pytest.raises(ValueError):
        HeatmapStack(channels=(Heatmap(np.zeros((3, 3))), Heatmap(np.zeros((4, 3)))))


def test_stack_max():
    a, b = Heatmap(np.array([[0.2, 0.9]])), Heatmap(np.array([[0.5, 0.1]]))
    np.testing.assert_allclose(stack_max([a, b], (2, 1)), [[0.5, 0.9]], rtol=1e-6)
