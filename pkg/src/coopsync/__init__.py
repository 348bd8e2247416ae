"""Cooperative localization and clock synchronization with Gaussian message passing."""

from .config import ConfigError, NoiseModel, PriorModel, ScenarioConfig, Schedule, load_config
from .gaussian import Belief, Gaussian1D

__all__ = ["Belief", "ConfigError", "Gaussian1D", "NoiseModel", "PriorModel", "ScenarioConfig",
           "Schedule", "load_config"]
__version__ = "0.1.0"
