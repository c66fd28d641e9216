from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("anchor-contour")
except PackageNotFoundError:
    __version__ = "0.0.0"

from .executor import Executor
from . import pipeline_producers

__all__ = ["Executor", "__version__"]
