"""Plausible counterfactual explanations for time series classifiers."""

from cfx.series import ClassLabel, Dataset, NormStats, TimeSeries, denormalize, z_normalize

__version__ = "0.1.0"

__all__ = [
    "ClassLabel",
    "Dataset",
    "NormStats",
    "TimeSeries",
    "denormalize",
    "z_normalize",
]
