"""
Producers for the experiment pipeline.

Scene -> SynthStack -> Extraction -> Evaluation -> CedSummary, plus the
ContournessStack side branch. Every producer writes ``payload.json`` next to
its binary payload (``payload.pkl`` through cloudpickle, or ``stack.ach``).
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import cloudpickle
from tqdm import tqdm

from .artifacts import CedSummary, ContournessStack, Evaluation, Extraction, Scene, SynthStack
from .contourness import contourness_map
from .deps import Deps
from .evaluation import (
    EvalReport,
    Prediction,
    ced_auc,
    gt_from_annotation,
    nme_ac,
    prediction_from_landmarks,
)
from .extraction import ExtractionParams, extract_stack
from .io import load_ach, read_annotation, read_traces, save_ach, write_annotation, write_json, write_traces
from .producers import producer
from .raster import HeatmapStack, split_channel_name, synth_stack
from .synthscene import Jitter, SceneSpec, gen_scene

log = logging.getLogger(__name__)

EVALUATION_METHODS = ("line", "spline", "extracted")


def _manifest(path: Path) -> dict:
    return json.loads(path.read_text())


def _dump_pickle(obj: Any, path: Path) -> Path:
    with path.open("wb") as f:
        cloudpickle.dump(obj, f)
    return path


def load_pickle(manifest_path: Path) -> Any:
    manifest = _manifest(manifest_path)
    payload_path = manifest_path.parent / manifest.get("payload", "payload.pkl")
    with payload_path.open("rb") as f:
        return cloudpickle.load(f)


@producer(Scene)
def make_scene(*, target: Scene, deps: Deps, out: Path) -> None:
    spec = SceneSpec(
        seed=target.seed,
        image_size=(target.width, target.height),
        face_scale=target.face_scale,
        jitter=Jitter() if target.jitter else Jitter.none(),
        landmarks_per_contour=target.landmarks_per_contour,
    )
    scene = gen_scene(spec)
    annotation_path = write_annotation(scene.annotation, out.parent / "annotation.json")
    payload_path = _dump_pickle(scene.annotation, out.parent / "payload.pkl")
    write_json(
        {
            "annotation": annotation_path.name,
            "payload": payload_path.name,
            "n_anchors": len(scene.annotation.anchors),
            "n_contours": len(scene.annotation.contours),
            "parameters": target.keys(),
        },
        out,
    )


@producer(SynthStack)
def make_synth_stack(*, target: SynthStack, deps: Deps, out: Path) -> None:
    annotation = load_pickle(deps.need(target.scene))
    stack = synth_stack(annotation, target.sigma, threads=deps.threads)
    stack_path = save_ach(stack, out.parent / "stack.ach")
    write_json(
        {"stack": stack_path.name, "channels": list(stack.names), "size": list(stack.size), "parameters": target.keys()},
        out,
    )


def load_stack(manifest_path: Path) -> HeatmapStack:
    return load_ach(manifest_path.parent / _manifest(manifest_path)["stack"])


@producer(ContournessStack)
def make_contourness_stack(*, target: ContournessStack, deps: Deps, out: Path) -> None:
    """C, O and N of every contour channel, stored as one ACH stack."""
    stack = load_stack(deps.need(target.stack))
    channels = []
    for name, h in zip(stack.names, stack.channels):
        role, short = split_channel_name(name)
        if role != "contour":
            continue
        fields = contourness_map(h, target.sigma)
        channels += [(f"C:{short}", fields.C), (f"O:{short}", fields.O), (f"N:{short}", fields.N)]
    result = HeatmapStack(channels=tuple(h for _, h in channels), names=tuple(n for n, _ in channels))
    stack_path = save_ach(result, out.parent / "stack.ach")
    write_json({"stack": stack_path.name, "channels": list(result.names), "parameters": target.keys()}, out)


@producer(Extraction)
def make_extraction(*, target: Extraction, deps: Deps, out: Path) -> None:
    stack = load_stack(deps.need(target.stack))
    params = ExtractionParams(
        sigma=target.sigma,
        high_threshold=target.high_threshold,
        low_threshold=target.low_threshold,
        min_trace_length=target.min_trace_length,
    ).with_defaults()
    anchors, traces = extract_stack(stack, params, threads=deps.threads)
    traces_path = write_traces(anchors, traces, params.to_dict(), out.parent / "traces.json")
    write_json(
        {
            "traces": traces_path.name,
            "n_anchors": len(anchors),
            "n_traces": {name: len(items) for name, items in traces.items()},
            "parameters": target.keys(),
        },
        out,
    )


def load_prediction(manifest_path: Path) -> Prediction:
    anchors, traces, _ = read_traces(manifest_path.parent / _manifest(manifest_path)["traces"])
    return Prediction.from_extraction(anchors, traces)


@producer(Evaluation)
def make_evaluation(*, target: Evaluation, deps: Deps, out: Path) -> None:
    if target.method not in EVALUATION_METHODS:
        raise ValueError(f"unknown evaluation method {target.method!r}, expected one of {EVALUATION_METHODS}")
    annotation = load_pickle(deps.need(target.scene))
    gt = gt_from_annotation(annotation, target.gt_spacing)
    if target.method == "extracted":
        if target.extraction is None:
            raise ValueError("method 'extracted' needs an Extraction")
        pred = load_prediction(deps.need(target.extraction))
    else:
        pred = prediction_from_landmarks(annotation, target.k, target.method)

    report = nme_ac(gt, pred, target.cutoff)
    payload_path = _dump_pickle(report, out.parent / "payload.pkl")
    write_json(
        {
            "payload": payload_path.name,
            "nme": report.nme_overall,
            "nme_per_part": report.nme_per_part,
            "missing": list(report.missing),
            "parameters": target.keys(),
        },
        out,
    )


@producer(CedSummary)
def make_ced_summary(*, target: CedSummary, deps: Deps, out: Path) -> None:
    """Aggregates per-face evaluations into one NME, CED and AUC."""
    if not target.evaluations:
        raise ValueError("CedSummary needs at least one Evaluation")
    face_nmes = []
    per_part: dict[str, list[float]] = {}
    for ev in tqdm(target.evaluations, desc=target.label, unit="face", disable=len(target.evaluations) < 2):
        manifest_path = deps.need(ev)
        report: EvalReport = load_pickle(manifest_path)
        face_nmes.append(report.nme_overall)
        for part, v in report.nme_per_part.items():
            per_part.setdefault(part, []).append(v)

    ced, auc = ced_auc(face_nmes, target.cutoff)
    mean_nme = sum(face_nmes) / len(face_nmes)
    log.info("%s: mean NME %.3f, AUC@%g %.2f over %d faces", target.label, mean_nme, target.cutoff, auc, len(face_nmes))
    write_json(
        {
            "label": target.label,
            "n_faces": len(face_nmes),
            "nme": mean_nme,
            "nme_per_part": {p: sum(v) / len(v) for p, v in sorted(per_part.items())},
            "auc": auc,
            "cutoff": target.cutoff,
            "ced": [list(pt) for pt in ced],
            "face_nmes": face_nmes,
            "parameters": {"label": target.label, "cutoff": target.cutoff, "n_evaluations": len(target.evaluations)},
        },
        out,
    )


def load_scene_annotation(manifest_path: Path):
    manifest = _manifest(manifest_path)
    return read_annotation(manifest_path.parent / manifest["annotation"])
