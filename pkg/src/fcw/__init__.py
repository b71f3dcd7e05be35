"""Forward collision warning: spatio-temporal attention trajectory prediction,
conformalized quantile intervals, and adaptive risk-threshold decisions."""

from .model import HstanConfig, HstanModel, PredictionBatch, desk_config, init_model, train
from .scenario import Episode, ScenarioSpec, gen_scenario, make_dataset

__all__ = [
    "HstanConfig",
    "HstanModel",
    "PredictionBatch",
    "desk_config",
    "init_model",
    "train",
    "Episode",
    "ScenarioSpec",
    "gen_scenario",
    "make_dataset",
]
