"""STAR-RIS-aided MEC sum computation-rate maximization."""

from .bcd import Baseline, optimize, run_baseline
from .channel import ChannelSet, effective_channel, effective_channels, sample_channels
from .experiments import SweepSpec, run_sweep, summarize
from .metrics import RateBreakdown, rate_breakdown
from .model import (
    BeamformerSet,
    EnergyPartition,
    Geometry,
    Protocol,
    SolveReport,
    StarRisState,
    SystemConfig,
)

__all__ = [
    "Baseline",
    "BeamformerSet",
    "ChannelSet",
    "EnergyPartition",
    "Geometry",
    "Protocol",
    "RateBreakdown",
    "SolveReport",
    "StarRisState",
    "SweepSpec",
    "SystemConfig",
    "effective_channel",
    "effective_channels",
    "optimize",
    "rate_breakdown",
    "run_baseline",
    "run_sweep",
    "sample_channels",
    "summarize",
]

__version__ = "0.1.0"
