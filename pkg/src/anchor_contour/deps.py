from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, TypeVar

from .artifacts import Artifact

if TYPE_CHECKING:
    from .executor import Executor

A = TypeVar("A", bound=Artifact)


class Deps:
    def __init__(self, executor: "Executor"):
        self._executor = executor

    @property
    def threads(self) -> int:
        return self._executor.threads

    def need(self, art: A) -> Path:
        # build/cache dependency and return its payload.json on disk
        return self._executor.materialize(art)
