"""Predictive demand forecasting and supply optimization for responsive transit."""

__version__ = "0.1.0"

from .data import Location, ODCountSeries, ODDataset, ODPair, SplitSpec
from .qr import DEFAULT_QUANTILES, QuantileForecast, tilted_loss
from .tndfs import CandidateRoute, DemandVector, NetworkInstance, RouteDesign

__all__ = [
    "Location",
    "ODPair",
    "ODCountSeries",
    "ODDataset",
    "SplitSpec",
    "QuantileForecast",
    "DEFAULT_QUANTILES",
    "tilted_loss",
    "NetworkInstance",
    "CandidateRoute",
    "DemandVector",
    "RouteDesign",
]
