"""AF screening from the rolling standard deviation of 20 consecutive intervals.

Each window of 20 intervals is labeled AF when its sample STD exceeds a
threshold; the recording is AF, SR or Mixed depending on the share of AF
windows. RMSSD and pNN50 per window are carried along as auxiliary features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, ClassifierMixin

from .core import Rhythm
from .exceptions import InvalidConfigError, SingleClassError, TooShortError
from .validation import check_interval_array, check_rhythm_labels

WINDOW = 20
MIXED = "Mixed"


@dataclass(frozen=True)
class AfConfig:
    std_threshold_ms: float = 100.0
    af_fraction: float = 0.5
    sr_fraction: float = 0.1
    stride: int = 1
    window: int = WINDOW

    def __post_init__(self):
        if not 0.0 <= self.sr_fraction <= self.af_fraction <= 1.0:
            raise InvalidConfigError("need 0 <= sr_fraction <= af_fraction <= 1")
        if self.stride < 1 or self.window < 2:
            raise InvalidConfigError("stride must be >= 1 and window >= 2")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class WindowScore:
    start_index: int
    std20_ms: float
    rmssd_ms: float
    pnn50_pct: float
    label: str = ""


@dataclass(frozen=True)
class AfScreenResult:
    window_scores: tuple
    fraction_af: float
    overall_label: str
    config: AfConfig = field(default_factory=AfConfig)

    @property
    def std20_ms(self):
        return np.array([w.std20_ms for w in self.window_scores])

    def to_dict(self, include_windows=False):
        d = {
            "overall_label": self.overall_label,
            "fraction_af": self.fraction_af,
            "n_windows": len(self.window_scores),
            "config": self.config.to_dict(),
        }
        if self.window_scores:
            s = self.std20_ms
            d["std20_median_ms"] = float(np.median(s))
        if include_windows:
            d["windows"] = [w.__dict__ for w in self.window_scores]
        return d


def _windows(x, window, stride):
    if x.size < window:
        raise TooShortError(f"need at least {window} intervals, got {x.size}")
    return sliding_window_view(x, window)[::stride]


def rolling_std20(intervals, stride=1, window=WINDOW):
    """Sample STD of each run of ``window`` consecutive intervals."""
    x = check_interval_array(intervals, min_length=0)
    return np.std(_windows(x, window, stride), axis=1, ddof=1)


def window_features(intervals, stride=1, window=WINDOW, usable=None):
    """Per-window STD, RMSSD and pNN50 as unlabeled :class:`WindowScore` records.

    With a ``usable`` mask, windows containing any unusable interval are
    skipped, so no window straddles a gap.
    """
    x = check_interval_array(intervals, min_length=0)
    w = _windows(x, window, stride)
    starts = np.arange(0, x.size - window + 1, stride)
    std = np.std(w, axis=1, ddof=1)
    d = np.diff(w, axis=1)
    rmssd = np.sqrt(np.mean(d * d, axis=1))
    pnn = 100.0 * np.mean(np.abs(d) > 50.0, axis=1)
    keep = np.ones(starts.size, dtype=bool)
    if usable is not None:
        bad = ~np.asarray(usable, dtype=bool)
        if bad.shape != x.shape:
            raise ValueError("usable mask length differs from the interval count")
        keep = ~_windows(bad, window, stride).any(axis=1)
    return [
        WindowScore(int(s), float(a), float(b), float(c))
        for s, a, b, c, k in zip(starts, std, rmssd, pnn, keep)
        if k
    ]


def classify(scores, config=None):
    """Label each window and the recording as a whole."""
    config = config or AfConfig()
    labeled = []
    for w in scores:
        if not isinstance(w, WindowScore):
            w = WindowScore(0, float(w), float("nan"), float("nan"))
        lab = Rhythm.AF.value if w.std20_ms > config.std_threshold_ms else Rhythm.SR.value
        labeled.append(WindowScore(w.start_index, w.std20_ms, w.rmssd_ms, w.pnn50_pct, lab))
    if not labeled:
        return AfScreenResult((), float("nan"), Rhythm.UNKNOWN.value, config)
    frac = sum(w.label == Rhythm.AF.value for w in labeled) / len(labeled)
    if frac >= config.af_fraction:
        overall = Rhythm.AF.value
    elif frac <= config.sr_fraction:
        overall = Rhythm.SR.value
    else:
        overall = MIXED
    return AfScreenResult(tuple(labeled), float(frac), overall, config)


def screen(intervals, config=None, usable=None):
    """``window_features`` followed by ``classify``."""
    config = config or AfConfig()
    return classify(window_features(intervals, config.stride, config.window, usable), config)


def balanced_accuracy(scores, is_af, threshold):
    pred = scores > threshold
    tpr = np.mean(pred[is_af])
    tnr = np.mean(~pred[~is_af])
    return 0.5 * (tpr + tnr)


def _scan(scores, is_af, step=1.0):
    lo = np.floor(scores.min())
    hi = np.ceil(scores.max())
    cand = np.arange(lo, hi + step, step)
    # sort once and count with searchsorted: O((n + m) log n) for the whole scan
    af = np.sort(scores[is_af])
    sr = np.sort(scores[~is_af])
    tpr = 1.0 - np.searchsorted(af, cand, side="right") / af.size
    tnr = np.searchsorted(sr, cand, side="right") / sr.size
    return cand, 0.5 * (tpr + tnr)


def calibrate_threshold(labeled_runs, base=None, step=1.0):
    """Pick the std20 threshold with the best window-level balanced accuracy.

    Candidates run at ``step`` ms across the observed score range. When
    several consecutive candidates tie, the midpoint of the first such run
    is returned, which lands in the middle of the gap for separable data.
    """
    base = base or AfConfig()
    scores, labels = [], []
    for series, label in labeled_runs:
        (lab,) = check_rhythm_labels([label])
        s = rolling_std20(series, base.stride, base.window)
        scores.append(s)
        labels.append(np.full(s.size, lab is Rhythm.AF))
    scores = np.concatenate(scores)
    is_af = np.concatenate(labels)
    if is_af.all() or not is_af.any():
        raise SingleClassError("calibration needs windows from both SR and AF runs")
    cand, bacc = _scan(scores, is_af, step)
    best = bacc.max()
    top = np.flatnonzero(np.isclose(bacc, best, rtol=0, atol=1e-12))
    # first contiguous run of optimal candidates
    run_end = top[0]
    while run_end + 1 in top:
        run_end += 1
    thr = 0.5 * (cand[top[0]] + cand[run_end])
    return AfConfig(float(thr), base.af_fraction, base.sr_fraction, base.stride, base.window)


class AFScreener(BaseEstimator, ClassifierMixin):
    """Recording-level AF screen.

    ``X`` is a list of interval sequences (or beat series); ``predict``
    returns ``"SR"``, ``"AF"`` or ``"Mixed"`` per recording. ``fit``
    calibrates the threshold when ``calibrate`` is set and otherwise keeps
    ``std_threshold_ms``.
    """

    def __init__(self, std_threshold_ms=100.0, af_fraction=0.5, sr_fraction=0.1, stride=1, calibrate=False):
        self.std_threshold_ms = std_threshold_ms
        self.af_fraction = af_fraction
        self.sr_fraction = sr_fraction
        self.stride = stride
        self.calibrate = calibrate

    def _base(self):
        return AfConfig(self.std_threshold_ms, self.af_fraction, self.sr_fraction, self.stride)

    def fit(self, X, y=None):
        base = self._base()
        if self.calibrate:
            if y is None:
                raise ValueError("calibrate=True needs labels y")
            self.config_ = calibrate_threshold(list(zip(X, y)), base)
        else:
            self.config_ = base
        self.threshold_ = self.config_.std_threshold_ms
        self.classes_ = np.array([Rhythm.AF.value, MIXED, Rhythm.SR.value])
        return self

    def screen(self, X):
        cfg = getattr(self, "config_", None) or self._base()
        return [screen(x, cfg) for x in X]

    def predict(self, X):
        return np.array([r.overall_label for r in self.screen(X)], dtype=object)

    def predict_proba_af(self, X):
        """Fraction of AF windows per recording."""
        return np.array([r.fraction_af for r in self.screen(X)])

    def score(self, X, y, sample_weight=None):
        y = [lab.value for lab in check_rhythm_labels(y)]
        return float(np.mean(self.predict(X) == np.asarray(y, dtype=object)))
