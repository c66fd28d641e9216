import math

import numpy as np
import pytest

from anchor_contour.annotation import Annotation, NamedAnchor, NamedContour
from anchor_contour.geometry import LandmarkChain, Point2, Polyline
from anchor_contour.synthscene import SceneSpec, gen_scene


def circle_points(cx: float, cy: float, r: float, n: int) -> np.ndarray:
    t = 2.0 * math.pi * np.arange(n) / n
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def horizontal_line():
    return Polyline.from_array([[4.0, 32.0], [60.0, 32.0]])


@pytest.fixture
def simple_annotation():
    """Two eye corners and one open contour carrying three landmarks."""
    contour = Polyline.from_array([[10.0, 30.0], [30.0, 30.0], [50.0, 30.0]])
    landmarks = LandmarkChain.from_array([[10.0, 30.0], [30.0, 30.0], [50.0, 30.0]])
    return Annotation(
        image_size=(64, 64),
        anchors=(NamedAnchor("right_eye_outer_corner", Point2(12.0, 20.0)), NamedAnchor("left_eye_outer_corner", Point2(52.0, 20.0))),
        contours=(NamedContour("upper_lip", contour),),
        landmarks={"upper_lip": landmarks},
        normalization_pair=("right_eye_outer_corner", "left_eye_outer_corner"),
        parts={"upper_lip": "mouth", "right_eye_outer_corner": "eyes", "left_eye_outer_corner": "eyes"},
    )


@pytest.fixture(scope="session")
def scene():
    return gen_scene(SceneSpec(seed=3))
