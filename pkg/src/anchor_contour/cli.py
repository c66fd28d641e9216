from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .annotation import Annotation
from .artifacts import CedSummary, Evaluation, Extraction, Scene, SynthStack
from .contourness import contourness_bruteforce, contourness_map, ideal_contourness, valid_mask
from .evaluation import (
    DEFAULT_CUTOFF,
    Prediction,
    evaluate_dataset,
    gt_from_annotation,
    plot_ced,
    prediction_from_landmarks,
    write_ced_csv,
)
from .extraction import ExtractionParams, extract_stack
from .geometry import Point2
from .gradcheck import GradCheckResult, check_loss_gradient
from .io import (
    dumps,
    export_pgm,
    load_ach,
    read_annotation,
    read_json,
    read_traces,
    save_ach,
    write_annotation,
    write_json,
    write_traces,
)
from .losses import LossWeights, WeakSupervision, full_loss, loss_gradient, weak_loss
from .raster import HeatmapStack, split_channel_name, synth_stack
from .synthscene import PARTS, Jitter, SceneSpec, SplitMix64, gen_scene
from .workflow import Config, Step, Workflow, render
from .workflow.config import default_cache_dir

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1

_GRAD_CHECK_PIXELS = 24
_ORACLE_THETAS = 720


@dataclass(frozen=True)
class CliConfig:
    """Hyperparameters shared across subcommands, validated once."""

    sigma: float = 2.0
    alpha: float = 10.0
    d_radius: int = 6
    lambda_landmark: float = 0.1
    lambda_line: float = 0.1
    high: Optional[float] = None
    low: Optional[float] = None
    min_trace_length: int = 3
    threads: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"--sigma must be > 0, got {self.sigma}")
        if self.threads < 1:
            raise ValueError(f"--threads must be >= 1, got {self.threads}")
        if self.seed < 0:
            raise ValueError(f"--seed must be >= 0, got {self.seed}")

    @classmethod
    def from_args(cls, args: argparse.Namespace, sigma_default: float = 2.0) -> "CliConfig":
        sigma = getattr(args, "sigma", None)
        return cls(
            sigma=sigma_default if sigma is None else sigma,
            alpha=getattr(args, "alpha", 10.0),
            d_radius=getattr(args, "d_radius", 6),
            lambda_landmark=getattr(args, "lambda_landmark", 0.1),
            lambda_line=getattr(args, "lambda_line", 0.1),
            high=getattr(args, "high", None),
            low=getattr(args, "low", None),
            min_trace_length=getattr(args, "min_trace_length", 3),
            threads=getattr(args, "threads", 1),
            seed=getattr(args, "seed", 0),
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.alpha, lambda_landmark=self.lambda_landmark, lambda_line=self.lambda_line, D=self.d_radius
        )

    def extraction_params(self) -> ExtractionParams:
        return ExtractionParams(
            sigma=self.sigma, high_threshold=self.high, low_threshold=self.low, min_trace_length=self.min_trace_length
        ).with_defaults()


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WIDTHxHEIGHT, got {text!r}") from None
    return w, h


def _emit(obj: Any) -> None:
    sys.stdout.write(dumps(obj))


# -- subcommands ---------------------------------------------------------------------------------


def cmd_gen_scene(args: argparse.Namespace) -> int:
    spec = SceneSpec(
        seed=args.seed,
        image_size=args.size,
        face_scale=args.face_scale,
        parts=tuple(n for n, tag in PARTS.items() if tag in args.parts) if args.parts else None,
        jitter=Jitter.none() if args.no_jitter else Jitter(),
        landmarks_per_contour=args.landmarks_per_contour,
        render=args.render is not None,
    )
    scene = gen_scene(spec)
    write_annotation(scene.annotation, args.out)
    if args.render is not None:
        export_pgm(scene.render, args.render)
    log.info(
        "scene seed=%d: %d anchors, %d contours -> %s",
        args.seed, len(scene.annotation.anchors), len(scene.annotation.contours), args.out,
    )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = CliConfig.from_args(args, sigma_default=2.0)
    annotation = read_annotation(args.annotation)
    stack = synth_stack(annotation, cfg.sigma, threads=cfg.threads)
    save_ach(stack, args.out)
    log.info("wrote %d channels of %dx%d to %s", len(stack), *stack.size, args.out)
    return EXIT_OK


def _oracle_check(stack: HeatmapStack, sigma: float, pixels: int, seed: int) -> Dict[str, Any]:
    """Closed-form C against the brute-force maximum at pseudo-random valid pixels of every channel."""
    rng = SplitMix64(seed)
    c_max = ideal_contourness(sigma)
    worst = 0.0
    checked = 0
    for name, h in zip(stack.names, stack.channels):
        fields = contourness_map(h, sigma)
        rows, cols = np.nonzero(valid_mask(fields.shape, fields.radius))
        if rows.size == 0:
            continue
        for _ in range(pixels):
            k = rng.integer(0, rows.size - 1)
            y, x = int(rows[k]), int(cols[k])
            brute = contourness_bruteforce(h, Point2(float(x), float(y)), sigma, _ORACLE_THETAS)
            worst = max(worst, abs(float(fields.c[y, x]) - brute))
            checked += 1
    tolerance = 1e-3 * c_max
    return {"checked": checked, "max_abs_diff": worst, "tolerance": tolerance, "passed": worst <= tolerance}


def _short_name(channel: str) -> str:
    try:
        return split_channel_name(channel)[1]
    except ValueError:
        return channel


def cmd_contourness(args: argparse.Namespace) -> int:
    cfg = CliConfig.from_args(args, sigma_default=3.0)
    stack = load_ach(args.input)
    names: List[str] = []
    channels = []
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        all_fields = list(pool.map(lambda h: contourness_map(h, cfg.sigma), stack.channels))
    for name, fields in zip(stack.names, all_fields):
        short = _short_name(name)
        names += [f"C:{short}", f"O:{short}", f"N:{short}"]
        channels += [fields.C, fields.O, fields.N]
    save_ach(HeatmapStack(channels=tuple(channels), names=tuple(names)), args.out)
    log.info("contourness of %d channels at sigma=%g -> %s", len(stack), cfg.sigma, args.out)

    if args.oracle:
        report = _oracle_check(stack, cfg.sigma, args.oracle, cfg.seed)
        _emit(report)
        if not report["passed"]:
            log.error("closed form deviates from brute force by %.3g", report["max_abs_diff"])
            return EXIT_FAILURE
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = CliConfig.from_args(args, sigma_default=3.0)
    params = cfg.extraction_params()
    stack = load_ach(args.input)
    anchors, traces = extract_stack(stack, params, threads=cfg.threads)
    write_traces(anchors, traces, params.to_dict(), args.out)
    log.info(
        "extracted %d anchors and %d traces -> %s", len(anchors), sum(len(t) for t in traces.values()), args.out
    )
    return EXIT_OK


def _grad_check_indices(grad: np.ndarray, count: int, seed: int) -> List[int]:
    # strongest analytic entries plus a pseudo-random spread
    flat = np.abs(grad).ravel()
    top = [int(i) for i in np.argsort(-flat, kind="stable")[:count] if flat[i] > 0]
    rng = SplitMix64(seed)
    spread = [rng.integer(0, flat.size - 1) for _ in range(count)]
    return sorted(set(top) | set(spread))


def _record_check(checks: Dict[str, Any], name: str, result: GradCheckResult) -> bool:
    checks[name] = result.to_dict()
    if not result.passed:
        log.error("gradient check failed for %s: max relative error %.3g", name, result.max_relative_error)
    return result.passed


def _full_breakdown(pred: HeatmapStack, annotation: Annotation, cfg: CliConfig, grad_check: bool):
    gt = synth_stack(annotation, cfg.sigma, threads=cfg.threads)
    if set(gt.names) != set(pred.names):
        raise ValueError(f"prediction channels {sorted(pred.names)} do not match annotation {sorted(gt.names)}")
    channels: Dict[str, float] = {}
    checks: Dict[str, Any] = {}
    ok = True
    aligned = np.stack([pred[name].as_float64() for name in gt.names]) if len(gt) else np.zeros((0, 1, 1))
    for name, p in zip(gt.names, aligned):
        g = gt[name].as_float64()
        channels[name] = full_loss(g, p, cfg.alpha)
        if grad_check:
            idx = _grad_check_indices(loss_gradient("full", g, p, cfg.alpha), _GRAD_CHECK_PIXELS, cfg.seed)
            ok &= _record_check(checks, name, check_loss_gradient("full", p, gt=g, args=(cfg.alpha,), indices=idx))
    # one RMS over every pixel of every channel
    total = full_loss(gt.as_array().astype(np.float64), aligned, cfg.alpha) if channels else 0.0
    doc = {"mode": "full", "channels": channels, "total": total}
    return doc, checks, ok


def _weak_breakdown(pred: HeatmapStack, annotation: Annotation, cfg: CliConfig, grad_check: bool):
    weights = cfg.loss_weights()
    f_params = weights.f_for(cfg.sigma)
    gt = synth_stack(annotation, cfg.sigma, threads=cfg.threads)
    channels: Dict[str, Any] = {}
    anchor_losses: Dict[str, float] = {}
    checks: Dict[str, Any] = {}
    ok = True
    for name, h in zip(pred.names, pred.channels):
        role, short = split_channel_name(name)
        x = h.as_float64()
        if role == "anchor":
            if name not in gt.names:
                raise KeyError(f"annotation has no anchor {short!r}")
            anchor_losses[name] = full_loss(gt[name].as_float64(), x, cfg.alpha)
            continue
        if short not in annotation.landmarks:
            raise KeyError(f"annotation has no landmarks for contour {short!r}")
        sup = WeakSupervision.from_chain(annotation.landmarks[short])
        parts = weak_loss(x, sup, cfg.sigma, weights, f_params)
        channels[name] = parts._asdict()
        if grad_check:
            args = (sup, cfg.sigma, weights, f_params)
            idx = _grad_check_indices(loss_gradient("weak", x, *args), _GRAD_CHECK_PIXELS, cfg.seed)
            ok &= _record_check(checks, name, check_loss_gradient("weak", x, args=args, indices=idx))

    weak_total = float(np.mean([c["total"] for c in channels.values()])) if channels else 0.0
    anchor_total = float(np.mean(list(anchor_losses.values()))) if anchor_losses else 0.0
    doc = {
        "mode": "weak",
        "params": {
            "alpha": weights.alpha,
            "lambda_landmark": weights.lambda_landmark,
            "lambda_line": weights.lambda_line,
            "D": weights.D,
            "c_max": f_params.c_max,
            "sigma": cfg.sigma,
        },
        "channels": channels,
        "anchors": anchor_losses,
        "weak_total": weak_total,
        "anchor_total": anchor_total,
        "total": weak_total + anchor_total,
    }
    return doc, checks, ok


def cmd_loss(args: argparse.Namespace) -> int:
    cfg = CliConfig.from_args(args, sigma_default=2.0)
    pred = load_ach(args.pred)
    annotation = read_annotation(args.annotation)
    if pred.size != annotation.image_size:
        raise ValueError(f"prediction size {pred.size} differs from annotation image size {annotation.image_size}")
    breakdown = _full_breakdown if args.mode == "full" else _weak_breakdown
    doc, checks, ok = breakdown(pred, annotation, cfg, args.grad_check)
    if args.grad_check:
        doc["grad_check"] = {"passed": ok, "channels": checks}
    if args.out:
        write_json(doc, args.out)
    else:
        _emit(doc)
    return EXIT_OK if ok else EXIT_FAILURE


def _prediction_for_eval(args: argparse.Namespace, gt_annotation: Annotation) -> Prediction:
    if args.pred is not None:
        doc = read_json(args.pred)
        if "channels" in doc:
            anchors, traces, _ = read_traces(args.pred)
            return Prediction.from_extraction(anchors, traces)
        source = read_annotation(args.pred)
    else:
        source = gt_annotation
    if args.contours == "dense":
        return Prediction(
            anchors=source.anchor_map(), contours={c.name: (c.polyline,) for c in source.contours}
        )
    return prediction_from_landmarks(source, args.k, args.contours)


def cmd_eval(args: argparse.Namespace) -> int:
    annotation = read_annotation(args.gt)
    gt = gt_from_annotation(annotation, args.gt_spacing)
    pred = _prediction_for_eval(args, annotation)
    report = evaluate_dataset([(gt, pred)], cutoff=args.cutoff, exclude=tuple(args.exclude or ()))
    if args.out:
        write_json(report.to_dict(), args.out)
    if args.ced_csv:
        write_ced_csv(report, args.ced_csv)
    if args.plot:
        plot_ced({args.contours: report}, args.plot)
    _emit({"nme": report.nme_overall, "nme_per_part": report.nme_per_part, "auc": report.auc, "missing": list(report.missing)})
    return EXIT_OK


def build_experiment(
    scenes: int, seed: int, k: int, synth_sigma: float, extract_sigma: float, cutoff: float
) -> Workflow:
    """Line, spline and extracted-contour evaluations over ``scenes`` generated faces."""
    wf = Workflow()
    by_method: Dict[str, List[Step]] = {m: [] for m in ("line", "spline", "extracted")}
    for i in range(scenes):
        scene = wf.add(Step(f"scene_{i}", Scene, {"seed": seed + i, "landmarks_per_contour": k}))
        stack = wf.add(Step(f"stack_{i}", SynthStack, {"scene_ref": scene.name, "sigma": synth_sigma}), [scene])
        extraction = wf.add(
            Step(f"extraction_{i}", Extraction, {"stack_ref": stack.name, "sigma": extract_sigma}), [stack]
        )
        for method in ("line", "spline"):
            by_method[method].append(
                wf.add(
                    Step(f"{method}_{i}", Evaluation, {"scene_ref": scene.name, "method": method, "k": k, "cutoff": cutoff}),
                    [scene],
                )
            )
        by_method["extracted"].append(
            wf.add(
                Step(
                    f"extracted_{i}",
                    Evaluation,
                    {"scene_ref": scene.name, "method": "extracted", "k": k, "extraction_ref": extraction.name, "cutoff": cutoff},
                ),
                [scene, extraction],
            )
        )
    for method, evals in by_method.items():
        wf.add(
            Step(
                f"summary_{method}",
                CedSummary,
                {"evaluations_ref": [e.name for e in evals], "label": method, "cutoff": cutoff},
            ),
            evals,
        )
    return wf


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = CliConfig.from_args(args)
    if args.scenes < 1:
        raise ValueError(f"--scenes must be >= 1, got {args.scenes}")
    wf = build_experiment(args.scenes, cfg.seed, args.k, args.synth_sigma, args.extract_sigma, args.cutoff)
    result = render(wf, Config(cache_dir=Path(args.cache_dir), threads=cfg.threads))
    methods = {}
    for method in ("line", "spline", "extracted"):
        summary = read_json(result["paths"][f"summary_{method}"])
        methods[method] = {"nme": summary["nme"], "auc": summary["auc"], "nme_per_part": summary["nme_per_part"]}
    doc = {
        "scenes": args.scenes,
        "seed": cfg.seed,
        "k": args.k,
        "cutoff": args.cutoff,
        "methods": methods,
    }
    if args.out:
        write_json(doc, args.out)
    _emit(doc)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------------


def _common(threads: bool = True, seed: bool = False) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--sigma", type=float, default=None, help="heatmap / filter width sigma")
    if threads:
        p.add_argument("--threads", type=int, default=1, help="worker threads (output is identical for any value)")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchor-contour", description="Anchor and contour heatmap toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a synthetic face annotation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=(256, 256), help="WIDTHxHEIGHT")
    p.add_argument("--face-scale", type=float, default=100.0)
    p.add_argument("--parts", nargs="+", choices=sorted(set(PARTS.values())), default=None)
    p.add_argument("--landmarks-per-contour", type=int, default=16)
    p.add_argument("--no-jitter", action="store_true")
    p.add_argument("--render", type=Path, default=None, help="also write a 16-bit PGM rendering")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("synth", parents=[_common()], help="synthesize the heatmap stack of an annotation")
    p.add_argument("--annotation", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("contourness", parents=[_common(seed=True)], help="contourness C, O, N of every channel")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument(
        "--oracle", type=int, default=0, metavar="PIXELS",
        help="compare against the brute-force maximum at PIXELS valid pixels per channel",
    )
    p.set_defaults(func=cmd_contourness)

    p = sub.add_parser("extract", parents=[_common()], help="extract anchors and contour traces")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--high", type=float, default=None, help="high hysteresis threshold (default 0.5 C_max)")
    p.add_argument("--low", type=float, default=None, help="low hysteresis threshold (default 0.25 C_max)")
    p.add_argument("--min-trace-length", type=int, default=3)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("loss", parents=[_common(seed=True)], help="full or weakly supervised loss of a prediction")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--annotation", type=Path, required=True)
    p.add_argument("--mode", choices=("full", "weak"), default="full")
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--d-radius", type=int, default=6)
    p.add_argument("--lambda-landmark", type=float, default=0.1)
    p.add_argument("--lambda-line", type=float, default=0.1)
    p.add_argument("--grad-check", action="store_true", help="validate gradients by central differences")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval", help="NME, CED and AUC against a ground-truth annotation")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--pred", type=Path, default=None, help="trace document or annotation (default: --gt itself)")
    p.add_argument("--contours", choices=("dense", "line", "spline"), default="dense")
    p.add_argument("--k", type=int, default=None, help="landmarks per contour (default: the annotation's own)")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--gt-spacing", type=float, default=2.0)
    p.add_argument("--exclude", action="append", default=None, help="landmark name or part tag (repeatable)")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--ced-csv", type=Path, default=None)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[_common(seed=True)], help="line / spline / extracted study")
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--synth-sigma", type=float, default=2.0)
    p.add_argument("--extract-sigma", type=float, default=3.0)
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--cache-dir", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    if getattr(args, "cache_dir", False) is None:
        args.cache_dir = default_cache_dir()
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError, RuntimeError, OSError) as e:
        log.error("%s: %s", args.command, e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
