"""
Small end-to-end run of the pipeline engine: five scenes, the three contour
constructions, and a CED summary for each. Intermediate payloads stay in .cache.
"""
import json
import logging
from pathlib import Path

import anchor_contour.workflow.config as cfg
import anchor_contour.workflow.render as rnd
import anchor_contour.workflow.workflow as mdl
from anchor_contour.artifacts import CedSummary, Evaluation, Extraction, Scene, SynthStack

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

N_SCENES = 5
K = 16

workflow = mdl.Workflow()
evaluations = {"line": [], "spline": [], "extracted": []}

for i in range(N_SCENES):
    step_scene = workflow.add(mdl.Step(name=f"scene_{i}", step_type=Scene, params={"seed": i}))
    step_stack = workflow.add(
        mdl.Step(name=f"stack_{i}", step_type=SynthStack, params={"scene_ref": step_scene.name, "sigma": 2.0}),
        depends_on=[step_scene],
    )
    step_extraction = workflow.add(
        mdl.Step(name=f"extraction_{i}", step_type=Extraction, params={"stack_ref": step_stack.name}),
        depends_on=[step_stack],
    )
    for method in ("line", "spline"):
        evaluations[method].append(
            workflow.add(
                mdl.Step(
                    name=f"{method}_{i}",
                    step_type=Evaluation,
                    params={"scene_ref": step_scene.name, "method": method, "k": K},
                ),
                depends_on=[step_scene],
            )
        )
    evaluations["extracted"].append(
        workflow.add(
            mdl.Step(
                name=f"extracted_{i}",
                step_type=Evaluation,
                params={"scene_ref": step_scene.name, "method": "extracted", "extraction_ref": step_extraction.name},
            ),
            depends_on=[step_scene, step_extraction],
        )
    )

for method, steps in evaluations.items():
    workflow.add(
        mdl.Step(
            name=f"summary_{method}",
            step_type=CedSummary,
            params={"evaluations_ref": [s.name for s in steps], "label": method},
        ),
        depends_on=steps,
    )

config = cfg.Config(renderer="local", cache_dir=Path(".cache"))
result = rnd.render(workflow, config)

print("Summaries:")
for method in evaluations:
    d = json.loads(result["paths"][f"summary_{method}"].read_text())
    print(f"  {method:10s} NME {d['nme']:.3f}  AUC@{d['cutoff']:g} {d['auc']:.2f}")
