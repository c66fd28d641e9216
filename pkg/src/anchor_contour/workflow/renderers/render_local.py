from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List

from ...artifacts import Artifact, artifact_from_dict, describe
from ...executor import Executor
from ..config import Config
from ..workflow import Workflow

import anchor_contour.pipeline_producers  # noqa: F401  registers producers

log = logging.getLogger(__name__)


def _topo_order(num_steps: int, edges: Iterable[tuple[int, int]]) -> List[int]:
    outgoing: Dict[int, List[int]] = {i: [] for i in range(num_steps)}
    in_deg = {i: 0 for i in range(num_steps)}
    for src, dst in edges:
        outgoing[src].append(dst)
        in_deg[dst] += 1

    queue = [i for i in range(num_steps) if in_deg[i] == 0]
    order: List[int] = []
    while queue:
        idx = queue.pop(0)
        order.append(idx)
        for nxt in outgoing[idx]:
            in_deg[nxt] -= 1
            if in_deg[nxt] == 0:
                queue.append(nxt)

    if len(order) != num_steps:
        raise ValueError("Workflow has a cycle")
    return order


def _is_artifact_dict(value: Any) -> bool:
    return isinstance(value, dict) and "type" in value and ("key" in value or "keys" in value)


def _resolve_ref(key: str, value: Any, artifacts_by_name: Dict[str, Artifact]) -> Any:
    if value not in artifacts_by_name:
        raise KeyError(f"parameter {key!r} refers to step {value!r}, which has not run")
    return artifacts_by_name[value]


def _resolve_params(
    raw_params: Dict[str, Any],
    artifacts_by_name: Dict[str, Artifact],
) -> Dict[str, Any]:
    resolved: Dict[str, Any] = {}
    for key, value in raw_params.items():
        target_key = key[:-4] if key.endswith("_ref") else key

        if _is_artifact_dict(value):
            resolved[target_key] = artifact_from_dict(value)
            continue

        if key.endswith("_ref") and isinstance(value, str):
            resolved[target_key] = _resolve_ref(key, value, artifacts_by_name)
            continue

        # a list of step names resolves to a tuple of their artifacts
        if key.endswith("_ref") and isinstance(value, (list, tuple)):
            resolved[target_key] = tuple(_resolve_ref(key, v, artifacts_by_name) for v in value)
            continue

        resolved[target_key] = value
    return resolved


def _log_dag(workflow: Workflow) -> None:
    log.debug("workflow DAG: %d steps, %d edges", len(workflow.steps), len(workflow.edges))
    for idx, step in enumerate(workflow.steps):
        log.debug("  [%d] %s -> %s params=%s", idx, step.name, step.step_type.__name__, step.params)
    for src, dst in workflow.edges:
        log.debug("  %s -> %s", workflow.steps[src].name, workflow.steps[dst].name)


def render_local(workflow: Workflow, config: Config) -> Dict[str, Any]:
    cache_dir = Path(config.cache_dir)
    executor = Executor(cache_dir=cache_dir, threads=config.threads)

    num_steps = len(workflow.steps)
    if num_steps == 0:
        return {"paths": {}, "artifacts": {}, "order": []}

    _log_dag(workflow)
    order = _topo_order(num_steps, workflow.edges)
    artifacts_by_name: Dict[str, Artifact] = {}
    paths_by_name: Dict[str, Path] = {}

    for idx in order:
        step = workflow.steps[idx]
        params = _resolve_params(step.params, artifacts_by_name)
        artifact = step.step_type(**params)
        log.info("step %s: %s %s", step.name, artifact.type_name, describe(artifact))
        path = executor.materialize(artifact)
        log.debug("  -> materialized at %s", path)
        artifacts_by_name[step.name] = artifact
        paths_by_name[step.name] = path

    return {"paths": paths_by_name, "artifacts": artifacts_by_name, "order": [workflow.steps[i].name for i in order]}
