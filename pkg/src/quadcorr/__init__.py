"""Time-tag coincidence analysis for multi-photon correlations."""

__version__ = "0.1.0"

from .accidentals import CorrectedRates, correct_rates, correct_window_counts
from .coincidence import DelayHistogram, WindowCounts, find_pairs, window_counts
from .pipeline import AnalysisSettings, analyze, g3_landmarks
from .rates import EfficiencySet, fit_arm_losses, infer_generation_rates
from .simulator import SimConfig, iter_simulate, simulate
from .tagstream import TagStream, iter_tag_file, load, save

__all__ = [
    "AnalysisSettings", "CorrectedRates", "DelayHistogram", "EfficiencySet", "SimConfig",
    "TagStream", "WindowCounts", "analyze", "correct_rates", "correct_window_counts",
    "find_pairs", "fit_arm_losses", "g3_landmarks", "infer_generation_rates", "iter_simulate",
    "iter_tag_file", "load", "save", "simulate", "window_counts",
]
