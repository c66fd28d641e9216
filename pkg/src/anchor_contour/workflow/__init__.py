from .config import Config
from .render import render
from .workflow import Step, Workflow

__all__ = ["Config", "Step", "Workflow", "render"]
