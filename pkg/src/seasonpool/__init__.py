"""Hierarchical pooling models for daily series with several seasonal patterns."""

from .errors import SeasonPoolError
from .model import ModelKind, ModelSpec, ParameterSet, PriorConstants, TimeSeries
from .timebase import SeasonalityKind

__all__ = [
    "ModelKind",
    "ModelSpec",
    "ParameterSet",
    "PriorConstants",
    "SeasonPoolError",
    "SeasonalityKind",
    "TimeSeries",
]
