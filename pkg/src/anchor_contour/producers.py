from __future__ import annotations

from typing import Callable, Dict, Type, TypeVar

from .artifacts import Artifact

T = TypeVar("T", bound=Artifact)

# producer(target=..., deps=..., out=...) writes the artifact's payload.json to out
ProducerFn = Callable[..., None]

_PRODUCERS: Dict[Type[Artifact], ProducerFn] = {}


def producer(return_type: Type[T]) -> Callable[[ProducerFn], ProducerFn]:
    def deco(fn: ProducerFn) -> ProducerFn:
        _PRODUCERS[return_type] = fn
        return fn
    return deco


def get_producer(t: Type[T]) -> ProducerFn:
    try:
        return _PRODUCERS[t]
    except KeyError:
        raise KeyError(f"No producer registered for artifact type: {t.__name__}") from None


def registered_types() -> list[str]:
    return sorted(t.__name__ for t in _PRODUCERS)
