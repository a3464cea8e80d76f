"""Configuration, orchestration and persistence of experiments."""
from __future__ import annotations

from .analysis import CriticalLevel, estimate_critical_level
from .config import ExperimentConfig, from_dict, from_json, load
from .store import ResultStore

__all__ = ["CriticalLevel", "ExperimentConfig", "ResultStore", "estimate_critical_level", "from_dict",
           "from_json", "load"]
