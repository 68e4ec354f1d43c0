"""Labeled random-finite-set particle tracking for superpositional radar returns."""

from .metrics import OspaParams, aggregate, ospa
from .motion import build_ncv
from .radar import RadarSensor, SensorGrid, amplitude_from_snr
from .rfs import Label, LabeledSet, LabeledState, elementary_symmetric
from .sacphd import CardinalityDistribution, Clamps, SaCphdFilter
from .scenario import RunConfig, ScenarioConfig, generate_truth, load_config, default_config
from .tracker import MultiTargetParticleFilter, TrackerConfig, estimate

__version__ = "0.1.0"

__all__ = [
    "CardinalityDistribution",
    "Clamps",
    "Label",
    "LabeledSet",
    "LabeledState",
    "MultiTargetParticleFilter",
    "OspaParams",
    "RadarSensor",
    "RunConfig",
    "SaCphdFilter",
    "ScenarioConfig",
    "SensorGrid",
    "TrackerConfig",
    "aggregate",
    "amplitude_from_snr",
    "build_ncv",
    "elementary_symmetric",
    "estimate",
    "generate_truth",
    "load_config",
    "ospa",
    "default_config",
]
