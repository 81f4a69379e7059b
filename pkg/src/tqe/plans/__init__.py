"""Bundled TPC-H-shaped plan files."""
from importlib import resources


def plan_path(name: str):
    """Path of a bundled plan, e.g. ``plan_path("q6")``."""
    return resources.files(__name__) / f"{name}.json"
