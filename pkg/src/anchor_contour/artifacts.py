from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Protocol, Tuple, runtime_checkable

from .identity import hash_identity

ARTIFACT_REGISTRY: dict[str, type[Artifact]] = {}


def register_artifact(cls: type[Artifact]):
    ARTIFACT_REGISTRY[cls.__name__] = cls
    return cls


def _is_artifact_dict(v: Any) -> bool:
    return isinstance(v, dict) and "type" in v and ("key" in v or "keys" in v)


def artifact_from_dict(d: dict) -> Artifact:
    t = d["type"]
    try:
        cls = ARTIFACT_REGISTRY[t]
    except KeyError as e:
        raise ValueError(f"Unknown artifact type: {t}") from e
    key = d.get("key", None)
    if key is None:
        key = d.get("keys", None)
    if key is None:
        raise ValueError("Artifact dict must include 'key' or 'keys'")

    resolved: dict[str, Any] = {}
    for k, v in key.items():
        if _is_artifact_dict(v):
            resolved[k] = artifact_from_dict(v)
        elif isinstance(v, list) and v and all(_is_artifact_dict(x) for x in v):
            resolved[k] = tuple(artifact_from_dict(x) for x in v)
        else:
            resolved[k] = v
    return cls(**resolved)


@runtime_checkable
class Artifact(Protocol):
    def keys(self) -> Mapping[str, Any]: ...
    def identity(self) -> str: ...
    def to_dict(self) -> dict: ...
    @property
    def type_name(self) -> str: ...


@dataclass(frozen=True)
class ArtifactBase:
    def keys(self) -> Mapping[str, Any]:
        raise NotImplementedError

    @property
    def type_name(self) -> str:
        return type(self).__name__

    def identity(self) -> str:
        return hash_identity(self.to_dict())

    def to_dict(self) -> dict:
        return {"type": self.__class__.__name__, "keys": self.keys()}


@register_artifact
@dataclass(frozen=True)
class Scene(ArtifactBase):
    """A generated face scene; ``jitter=False`` places the face without random pose."""

    seed: int
    width: int = 256
    height: int = 256
    face_scale: float = 100.0
    landmarks_per_contour: int = 16
    jitter: bool = True

    def keys(self) -> Mapping[str, Any]:
        return {
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "face_scale": self.face_scale,
            "landmarks_per_contour": self.landmarks_per_contour,
            "jitter": self.jitter,
        }


@register_artifact
@dataclass(frozen=True)
class SynthStack(ArtifactBase):
    scene: Scene
    sigma: float = 2.0

    def keys(self) -> Mapping[str, Any]:
        return {"scene": self.scene.to_dict(), "sigma": self.sigma}


@register_artifact
@dataclass(frozen=True)
class ContournessStack(ArtifactBase):
    stack: SynthStack
    sigma: float = 3.0

    def keys(self) -> Mapping[str, Any]:
        return {"stack": self.stack.to_dict(), "sigma": self.sigma}


@register_artifact
@dataclass(frozen=True)
class Extraction(ArtifactBase):
    stack: SynthStack
    sigma: float = 3.0
    high_threshold: Optional[float] = None
    low_threshold: Optional[float] = None
    min_trace_length: int = 3

    def keys(self) -> Mapping[str, Any]:
        return {
            "stack": self.stack.to_dict(),
            "sigma": self.sigma,
            "high_threshold": self.high_threshold,
            "low_threshold": self.low_threshold,
            "min_trace_length": self.min_trace_length,
        }


@register_artifact
@dataclass(frozen=True)
class Evaluation(ArtifactBase):
    """
    NME of one scene for one contour construction: "line" or "spline" from k
    sparse landmarks, or "extracted" from the given Extraction.
    """

    scene: Scene
    method: str
    k: int = 16
    extraction: Optional[Extraction] = None
    cutoff: float = 6.0
    gt_spacing: float = 2.0

    def keys(self) -> Mapping[str, Any]:
        return {
            "scene": self.scene.to_dict(),
            "method": self.method,
            "k": self.k,
            "extraction": self.extraction.to_dict() if self.extraction is not None else None,
            "cutoff": self.cutoff,
            "gt_spacing": self.gt_spacing,
        }


@register_artifact
@dataclass(frozen=True)
class CedSummary(ArtifactBase):
    evaluations: Tuple[Evaluation, ...]
    label: str
    cutoff: float = 6.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "evaluations", tuple(self.evaluations))

    def keys(self) -> Mapping[str, Any]:
        return {
            "evaluations": [e.to_dict() for e in self.evaluations],
            "label": self.label,
            "cutoff": self.cutoff,
        }


def describe(art: Artifact) -> Dict[str, Any]:
    """Short, log-friendly view of an artifact: nested artifacts by type name."""
    out: Dict[str, Any] = {}
    for k, v in art.keys().items():
        if _is_artifact_dict(v):
            out[k] = f"{v['type']}"
        elif isinstance(v, list) and v and all(_is_artifact_dict(x) for x in v):
            out[k] = f"{len(v)} x {v[0]['type']}"
        else:
            out[k] = v
    return out
