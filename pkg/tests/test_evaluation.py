import math

import numpy as np
import pytest

from anchor_contour.annotation import Annotation, NamedAnchor, NamedContour
from anchor_contour.evaluation import (
    GroundTruthLandmarks,
    Prediction,
    ced_auc,
    evaluate_dataset,
    gt_from_annotation,
    landmark_error,
    nme_ac,
    plot_ced,
    prediction_from_landmarks,
    write_ced_csv,
)
from anchor_contour.extraction import ExtractionParams, extract_stack
from anchor_contour.geometry import Point2, Polyline
from anchor_contour.raster import synth_stack
from anchor_contour.synthscene import SceneSpec, gen_scene

from conftest import circle_points


def _exact_prediction(annotation: Annotation) -> Prediction:
    return Prediction(anchors=annotation.anchor_map(), contours={c.name: (c.polyline,) for c in annotation.contours})


def _similarity(scale: float, angle: float, shift):
    rot = scale * np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    shift = np.asarray(shift, dtype=np.float64)

    def point(p: Point2) -> Point2:
        x, y = rot @ np.array(p.as_tuple()) + shift
        return Point2(float(x), float(y))

    def polyline(c: Polyline) -> Polyline:
        return Polyline.from_array(c.array @ rot.T + shift, closed=c.closed)

    return point, polyline


def _circle_annotation(k_vertices: int = 720) -> Annotation:
    return Annotation(
        image_size=(128, 128),
        anchors=(NamedAnchor("a", Point2(20.0, 64.0)), NamedAnchor("b", Point2(108.0, 64.0))),
        contours=(NamedContour("ring", Polyline.from_array(circle_points(64.0, 64.0, 40.0, k_vertices), closed=True)),),
        normalization_pair=("a", "b"),
        parts={"ring": "outline", "a": "eyes", "b": "eyes"},
    )


def test_self_evaluation(scene):
    report = nme_ac(gt_from_annotation(scene.annotation), _exact_prediction(scene.annotation))
    assert report.nme_overall == pytest.approx(0.0, abs=1e-9)
    assert report.auc == pytest.approx(100.0)
    assert report.missing == ()
    assert all(e.error >= 0.0 for e in report.per_landmark_errors)


def test_nme_is_similarity_invariant(scene):
    gt = gt_from_annotation(scene.annotation)
    pred = prediction_from_landmarks(scene.annotation, 16, "line")
    before = nme_ac(gt, pred)

    point, polyline = _similarity(1.7, 0.4, (-30.0, 12.5))
    moved_gt = GroundTruthLandmarks(
        anchor_landmarks={k: point(p) for k, p in gt.anchor_landmarks.items()},
        contour_landmark_groups={k: tuple(point(p) for p in v) for k, v in gt.contour_landmark_groups.items()},
        normalization_pair=gt.normalization_pair,
        part_labels=gt.part_labels,
    )
    moved_pred = Prediction(
        anchors={k: point(p) for k, p in pred.anchors.items()},
        contours={k: tuple(polyline(c) for c in v) for k, v in pred.contours.items()},
    )
    after = nme_ac(moved_gt, moved_pred)
    assert before.nme_overall > 0.0
    assert after.nme_overall == pytest.approx(before.nme_overall, abs=1e-9)
    for part, value in before.nme_per_part.items():
        assert after.nme_per_part[part] == pytest.approx(value, abs=1e-9)


def test_contour_error_ignores_sliding_along_the_curve():
    pred = Prediction(contours={"c": (Polyline.from_array([[0.0, 0.0], [100.0, 0.0]]),)})
    assert landmark_error(Point2(37.2, 0.0), ("contour", "c"), pred) == 0.0
    assert landmark_error(Point2(37.2, 2.5), ("contour", "c"), pred) == pytest.approx(2.5)


def test_contour_error_uses_the_nearest_trace():
    pred = Prediction(
        contours={"c": (Polyline.from_array([[0.0, 0.0], [10.0, 0.0]]), Polyline.from_array([[0.0, 5.0], [10.0, 5.0]]))}
    )
    assert landmark_error(Point2(3.0, 4.0), ("contour", "c"), pred) == pytest.approx(1.0)


def test_landmark_error_missing_prediction():
    pred = Prediction(anchors={"a": Point2(1.0, 1.0)})
    assert landmark_error(Point2(4.0, 5.0), ("anchor", "a"), pred) == pytest.approx(5.0)
    with pytest.raises(KeyError):
        landmark_error(Point2(0.0, 0.0), ("anchor", "b"), pred)
    assert landmark_error(Point2(0.0, 0.0), ("contour", "c"), pred, missing_penalty=3.0) == 3.0
    with pytest.raises(ValueError):
        landmark_error(Point2(0.0, 0.0), ("mesh", "a"), pred)


def test_missing_contour_is_scored_at_the_cutoff():
    annotation = _circle_annotation()
    gt = gt_from_annotation(annotation)
    report = nme_ac(gt, Prediction(anchors=annotation.anchor_map()), cutoff=6.0)
    assert report.missing == ("ring",)
    assert report.nme_per_part["outline"] == pytest.approx(6.0)
    assert report.nme_per_part["eyes"] == 0.0
    assert 0.0 < report.nme_overall < 6.0


def test_exclusion_by_part_and_name(scene):
    gt = gt_from_annotation(scene.annotation)
    pred = prediction_from_landmarks(scene.annotation, 8, "line")
    no_mouth = nme_ac(gt, pred, exclude=["mouth"])
    assert "mouth" not in no_mouth.nme_per_part
    assert all(e.part != "mouth" for e in no_mouth.per_landmark_errors)

    name = scene.annotation.contours[0].name
    assert all(e.owner != name for e in nme_ac(gt, pred, exclude=[name]).per_landmark_errors)


def test_normalization_anchors_are_required():
    with pytest.raises(KeyError):
        GroundTruthLandmarks(anchor_landmarks={"a": Point2(0, 0)}, contour_landmark_groups={}, normalization_pair=("a", "b"))
    gt = GroundTruthLandmarks(
        anchor_landmarks={"a": Point2(1, 1), "b": Point2(1, 1)}, contour_landmark_groups={}, normalization_pair=("a", "b")
    )
    with pytest.raises(ValueError):
        gt.normalization()


@pytest.mark.parametrize(
    "errors, expected",
    [([0.0, 0.0, 0.0], 100.0), ([6.0, 7.5], 0.0), ([3.0], 50.0), ([0.0, 6.0], 50.0)],
)
def test_auc_examples(errors, expected):
    _, auc = ced_auc(errors, 6.0)
    assert auc == pytest.approx(expected, abs=1e-12)


def test_ced_is_sorted_and_cumulative():
    ced, _ = ced_auc([2.0, 0.5, 1.0, 4.0])
    assert [e for e, _ in ced] == [0.5, 1.0, 2.0, 4.0]
    assert [f for _, f in ced] == [0.25, 0.5, 0.75, 1.0]


def test_auc_is_monotone_in_face_errors(rng):
    errors = list(rng.uniform(0.0, 8.0, size=30))
    _, base = ced_auc(errors)
    for i in range(len(errors)):
        worse = list(errors)
        worse[i] += rng.uniform(0.0, 2.0)
        assert ced_auc(worse)[1] <= base + 1e-12


def test_ced_rejects_bad_input():
    with pytest.raises(ValueError):
        ced_auc([], 6.0)
    with pytest.raises(ValueError):
        ced_auc([1.0], 0.0)


@pytest.mark.parametrize("k", [8, 16, 32])
def test_line_spline_dense_ordering_on_circle(k):
    annotation = _circle_annotation()
    gt = gt_from_annotation(annotation)
    line = nme_ac(gt, prediction_from_landmarks(annotation, k, "line")).nme_overall
    spline = nme_ac(gt, prediction_from_landmarks(annotation, k, "spline")).nme_overall
    dense = nme_ac(gt, _exact_prediction(annotation)).nme_overall
    assert line > spline > dense - 1e-12
    assert dense == pytest.approx(0.0, abs=1e-9)


def test_prediction_from_annotation_landmarks(simple_annotation):
    pred = prediction_from_landmarks(simple_annotation, None, "spline")
    assert set(pred.contours) == {"upper_lip"}
    with pytest.raises(ValueError):
        prediction_from_landmarks(simple_annotation, 8, "bezier")


def test_evaluate_dataset_is_thread_independent():
    pairs = []
    for seed in range(3):
        annotation = gen_scene(SceneSpec(seed=seed)).annotation
        pairs.append((gt_from_annotation(annotation), prediction_from_landmarks(annotation, 8, "line")))
    one = evaluate_dataset(pairs, threads=1)
    three = evaluate_dataset(pairs, threads=3)
    assert one.to_dict() == three.to_dict()
    assert len(one.face_nmes) == 3
    assert one.nme_overall == pytest.approx(np.mean(one.face_nmes))
    with pytest.raises(ValueError):
        evaluate_dataset([])


def test_ced_csv_and_plot(tmp_path):
    annotation = _circle_annotation()
    report = evaluate_dataset([(gt_from_annotation(annotation), prediction_from_landmarks(annotation, 8, "line"))])
    lines = write_ced_csv(report, tmp_path / "ced.csv").read_text().splitlines()
    assert lines[0] == "nme,fraction"
    assert len(lines) == 2
    assert plot_ced({"line": report}, tmp_path / "ced.png").stat().st_size > 0


@pytest.mark.slow
def test_sparse_constructions_rank_below_extracted_contours():
    params = ExtractionParams(sigma=3.0)
    totals = {"line": [], "spline": [], "extracted": []}
    for seed in range(50):
        annotation = gen_scene(SceneSpec(seed=seed)).annotation
        gt = gt_from_annotation(annotation)
        for kind in ("line", "spline"):
            totals[kind].append(nme_ac(gt, prediction_from_landmarks(annotation, 16, kind)).nme_overall)
        anchors, traces = extract_stack(synth_stack(annotation, 2.0), params)
        totals["extracted"].append(nme_ac(gt, Prediction.from_extraction(anchors, traces)).nme_overall)
    means = {k: float(np.mean(v)) for k, v in totals.items()}
    assert means["line"] > means["spline"] > means["extracted"]


def test_anchor_offsets_scale_with_their_share_of_landmarks():
    line = Polyline.from_array([[0.0, 50.0], [100.0, 50.0]])
    gt = GroundTruthLandmarks(
        anchor_landmarks={"a": Point2(0.0, 0.0), "b": Point2(100.0, 0.0)},
        contour_landmark_groups={"c": tuple(Point2(float(x), 50.0) for x in range(0, 100, 5))},
        normalization_pair=("a", "b"),
    )
    pred = Prediction(anchors={"a": Point2(0.0, 1.0), "b": Point2(101.0, 0.0)}, contours={"c": (line,)})
    n_anchors, n_landmarks = 2, 22
    assert nme_ac(gt, pred).nme_overall == pytest.approx(n_anchors / n_landmarks * 1.0)
