"""Deep learning of graph-parameterised stopping boundaries for Bermudan and
American options, with sharp-boundary Monte Carlo pricing and independent
reference prices."""

from .instruments import Instrument
from .models import BlackScholes, Heston, PathBatch, TimeGrid, simulate_batch
from .netcore import NetConfig
from .presets import Problem, get_preset, preset_names
from .pricing import NetBoundary, PriceReport, price_mc
from .train import TrainConfig, TrainReport, train

__all__ = [
    "BlackScholes", "Heston", "Instrument", "NetBoundary", "NetConfig", "PathBatch",
    "PriceReport", "Problem", "TimeGrid", "TrainConfig", "TrainReport", "get_preset",
    "preset_names", "price_mc", "simulate_batch", "train",
]

__version__ = "0.1.0"
