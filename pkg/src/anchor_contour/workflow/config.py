from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

CACHE_ENV = "ANCHOR_CONTOUR_CACHE"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, ".cache"))


@dataclass(frozen=True)
class Config:
    renderer: Literal["local"] = "local"
    cache_dir: Path = field(default_factory=default_cache_dir)
    threads: int = 1
