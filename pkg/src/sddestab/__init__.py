"""Stability analysis of linear stochastic delay differential equations."""

from .model import AnalysisSettings, ConfigError, InitialFunction, NoiseClass, SddeSystem, classify_noise
from .verdict import Verdict, decide

__all__ = [
    "AnalysisSettings",
    "ConfigError",
    "InitialFunction",
    "NoiseClass",
    "SddeSystem",
    "Verdict",
    "classify_noise",
    "decide",
]
__version__ = "0.1.0"
