import numpy as np
import pytest

from anchor_contour.geometry import Polyline
from anchor_contour.gradcheck import GradCheckResult, check_loss_gradient, compare_gradients, numeric_gradient


def test_numeric_gradient_of_quadratic(rng):
    x = rng.normal(size=(3, 4))
    grad = numeric_gradient(lambda p: float(np.sum(p ** 2)), x)
    np.testing.assert_allclose(grad, 2.0 * x, atol=1e-8)


def test_numeric_gradient_leaves_unselected_entries_nan():
    grad = numeric_gradient(lambda p: float(np.sum(p)), np.zeros((2, 2)), indices=[1, 2])
    assert np.isnan(grad[0, 0]) and np.isnan(grad[1, 1])
    np.testing.assert_allclose([grad[0, 1], grad[1, 0]], 1.0)


def test_numeric_gradient_does_not_modify_input():
    x = np.arange(4.0)
    numeric_gradient(lambda p: float(p @ p), x)
    np.testing.assert_array_equal(x, np.arange(4.0))


def test_compare_gradients_flags_a_wrong_gradient(rng):
    g = rng.uniform(0.5, 1.0, size=20)
    assert compare_gradients(g, g * (1 + 1e-5)).passed
    bad = compare_gradients(g * 1.1, g)
    assert not bad.passed
    assert bad.max_relative_error == pytest.approx(0.1 / 1.1)
    assert bad.n_checked == 20


def test_compare_gradients_skips_tiny_entries():
    result = compare_gradients(np.array([1e-9, 1.0]), np.array([5.0, 1.0]))
    assert result.n_checked == 1
    assert result.passed


def test_result_to_dict():
    d = GradCheckResult(max_relative_error=2e-4, n_checked=7, rtol=1e-3).to_dict()
    assert d == {"max_relative_error": 2e-4, "n_checked": 7, "rtol": 1e-3, "passed": True}


def test_check_loss_gradient_on_selected_pixels(rng):
    pred = 0.1 + rng.uniform(size=(16, 16))
    result = check_loss_gradient(
        "far", pred, args=(Polyline.from_array([[2.0, 8.0], [13.0, 8.0]]), 2, 10.0), indices=[0, 5, 40, 255]
    )
    assert result.n_checked == 4
    assert result.passed
