"""Validation of wearable inter-beat intervals against an ECG reference, with AF screening."""

__version__ = "0.1.0"

from .afscreen import AFScreener, AfConfig, AfScreenResult, calibrate_threshold, classify, rolling_std20, screen
from .beatmatch import DetectionCounts, DetectionSummary, MatchResult, match, summarize
from .core import BeatSeries, IntervalView, MinuteWindow, Rhythm, Source, intervals, validate_series, windows
from .exceptions import *  # noqa: F401,F403
from .io import load_beat_file, write_beat_file
from .metrics import (
    BlandAltmanData,
    EctopicFilter,
    ErrorStats,
    HRVFeatures,
    HrvStats,
    PairSet,
    bland_altman,
    build_pairs,
    error_stats,
    exclude_ectopic,
    hrv_stats,
)
from .pipeline import PipelineConfig, evaluate
from .sync import ClockAligner, ClockMap, SearchConfig, SyncReport, estimate_global_alignment, refine_per_window, synchronize
from .synth import SynthConfig, corrupt, generate
