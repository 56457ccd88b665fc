"""Interval error statistics, Bland-Altman data, ectopic exclusion and HRV.

Errors are signed device minus reference (``ibi - rri``), so a device that
reads short yields a negative mean error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import BeatSeries, IntervalView, intervals as series_intervals, window_index
from .exceptions import EmptyPairSetError, TooShortError
from .validation import check_interval_array

ECTOPIC_THRESHOLD = 0.30
ECTOPIC_MEDIAN_WINDOW = 11
PNN_THRESHOLD_MS = 50.0
LOA_Z = 1.96


@dataclass(frozen=True, eq=False)
class PairSet:
    """Matched reference/device interval pairs from clean windows."""

    rri_ms: np.ndarray
    ibi_ms: np.ndarray
    end_timestamp_ms: np.ndarray
    window_index: np.ndarray
    ref_interval_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    det_interval_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    n_candidates: int = 0
    dropped_unclean: int = 0
    dropped_ectopic: int = 0

    def __len__(self):
        return len(self.rri_ms)

    @property
    def errors_ms(self):
        return self.ibi_ms - self.rri_ms

    @classmethod
    def from_arrays(cls, rri, ibi):
        rri = np.asarray(rri, dtype=float)
        ibi = np.asarray(ibi, dtype=float)
        if rri.shape != ibi.shape:
            raise ValueError("rri and ibi must have the same length")
        n = rri.size
        return cls(rri, ibi, np.zeros(n), np.zeros(n, dtype=np.int64), n_candidates=n)

    def provenance(self):
        return {
            "n_pairs": len(self),
            "n_candidates": self.n_candidates,
            "dropped_unclean": self.dropped_unclean,
            "dropped_ectopic": self.dropped_ectopic,
        }


@dataclass(frozen=True)
class ErrorStats:
    me_ms: float
    mae_ms: float
    mape_pct: float
    rmse_ms: float
    n_pairs: int

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class HrvStats:
    rmssd_ms: float
    pnn50_pct: float
    std_ms: float
    n_intervals: int
    n_differences: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class BlandAltmanData:
    mean_ms: np.ndarray
    diff_ms: np.ndarray
    bias_ms: float
    sd_ms: float
    loa_low_ms: float
    loa_high_ms: float

    @property
    def points(self):
        return np.column_stack([self.mean_ms, self.diff_ms])

    def to_dict(self):
        return {
            "bias_ms": self.bias_ms,
            "sd_ms": self.sd_ms,
            "loa_low_ms": self.loa_low_ms,
            "loa_high_ms": self.loa_high_ms,
            "n_points": int(self.mean_ms.size),
        }


@dataclass(frozen=True, eq=False)
class EctopicExclusion:
    """Interval-level exclusion mask for one series.

    Intervals are flagged rather than deleted: dropping the ectopic beat
    itself would merge the premature and compensatory intervals into one
    spurious long interval.
    """

    intervals: IntervalView
    mask: np.ndarray  # True where the interval is excluded
    threshold: float
    window: int

    @property
    def n_excluded(self):
        return int(np.count_nonzero(self.mask))

    @property
    def fraction_excluded(self):
        return self.n_excluded / max(1, self.mask.size)

    @property
    def excluded_indices(self):
        return np.flatnonzero(self.mask)

    @property
    def kept_intervals_ms(self):
        return self.intervals.intervals_ms[~self.mask]

    def to_dict(self):
        return {
            "n_intervals": int(self.mask.size),
            "n_excluded": self.n_excluded,
            "threshold": self.threshold,
            "window": self.window,
        }


def _median(v):
    # plain sorted() beats np.median by ~10x on 11-element windows
    v = sorted(v)
    k = len(v) // 2
    return v[k] if len(v) % 2 else 0.5 * (v[k - 1] + v[k])


def exclude_ectopic(
    series,
    threshold=ECTOPIC_THRESHOLD,
    window=ECTOPIC_MEDIAN_WINDOW,
    require_compensatory=True,
):
    """Flag ectopic intervals against a running median of accepted intervals.

    An interval deviates when it differs from the median of the previous
    ``window`` accepted intervals by more than ``threshold`` (a fraction).
    With ``require_compensatory`` (the default) only premature/compensatory
    signatures are excluded: a deviating interval whose neighbour deviates in
    the opposite direction, both being removed. This leaves the diffuse
    irregularity of AF in place. With ``require_compensatory=False`` every
    deviating interval is excluded.
    """
    iv = series if isinstance(series, IntervalView) else None
    if iv is None:
        if isinstance(series, BeatSeries):
            iv = series_intervals(series)
        else:
            x = check_interval_array(series, min_length=1)
            iv = IntervalView(x, np.cumsum(x))
    x = iv.intervals_ms.astype(float)
    n = x.size
    mask = np.zeros(n, dtype=bool)
    accepted = []
    seed_median = float(np.median(x[: min(window, n)]))

    xs = x.tolist()

    def deviation(i):
        ref = _median(accepted[-window:]) if accepted else seed_median
        return (xs[i] - ref) / ref

    i = 0
    while i < n:
        dev = deviation(i)
        if abs(dev) <= threshold:
            accepted.append(xs[i])
            i += 1
            continue
        if not require_compensatory:
            mask[i] = True
            i += 1
            continue
        # look for the opposite-signed partner right after this interval
        if i + 1 < n:
            nxt = deviation(i + 1)
            if abs(nxt) > threshold and np.sign(nxt) != np.sign(dev):
                mask[i] = mask[i + 1] = True
                i += 2
                continue
        accepted.append(xs[i])
        i += 1
    return EctopicExclusion(iv, mask, float(threshold), int(window))


def error_stats(pairs):
    """ME, MAE, MAPE (relative to the reference) and RMSE over interval pairs."""
    if not isinstance(pairs, PairSet):
        pairs = PairSet.from_arrays(*np.asarray(pairs, dtype=float).T)
    if len(pairs) < 1:
        raise EmptyPairSetError("no interval pairs")
    e = pairs.errors_ms
    ae = np.abs(e)
    return ErrorStats(
        me_ms=float(np.mean(e)),
        mae_ms=float(np.mean(ae)),
        mape_pct=float(np.mean(ae / pairs.rri_ms) * 100.0),
        rmse_ms=float(np.sqrt(np.mean(e * e))),
        n_pairs=len(pairs),
    )


def bland_altman(pairs, z=LOA_Z):
    """Per-pair mean/difference points, bias and limits of agreement (sample SD)."""
    if not isinstance(pairs, PairSet):
        pairs = PairSet.from_arrays(*np.asarray(pairs, dtype=float).T)
    if len(pairs) < 2:
        raise EmptyPairSetError("Bland-Altman analysis needs at least 2 pairs")
    mean = (pairs.rri_ms + pairs.ibi_ms) / 2.0
    diff = pairs.errors_ms
    bias = float(np.mean(diff))
    sd = float(np.std(diff, ddof=1))
    return BlandAltmanData(mean, diff, bias, sd, bias - z * sd, bias + z * sd)


def successive_differences(x, usable=None):
    """Differences ``x[i+1] - x[i]`` where both intervals are usable."""
    x = np.asarray(x, dtype=float)
    d = np.diff(x)
    if usable is None:
        return d
    usable = np.asarray(usable, dtype=bool)
    return d[usable[1:] & usable[:-1]]


def hrv_stats(intervals, exclude=None, pnn_threshold_ms=PNN_THRESHOLD_MS):
    """RMSSD, pNN50 and sample STD of an interval sequence.

    ``exclude`` is a boolean mask (or :class:`EctopicExclusion`) of intervals
    to leave out; successive differences touching an excluded interval are
    dropped, so gaps in the mask never produce spurious differences.
    """
    if isinstance(intervals, IntervalView):
        x = intervals.intervals_ms.astype(float)
    elif isinstance(intervals, BeatSeries):
        x = series_intervals(intervals).intervals_ms.astype(float)
    else:
        x = check_interval_array(intervals, min_length=0)
    if isinstance(exclude, EctopicExclusion):
        exclude = exclude.mask
    usable = np.ones(x.size, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    if usable.shape != x.shape:
        raise ValueError("exclusion mask length differs from the interval count")
    kept = x[usable]
    if kept.size < 2:
        raise TooShortError(f"need at least 2 usable intervals, got {kept.size}")
    d = successive_differences(x, usable)
    if d.size:
        rmssd = float(np.sqrt(np.mean(d * d)))
        pnn = float(100.0 * np.count_nonzero(np.abs(d) > pnn_threshold_ms) / d.size)
    else:
        rmssd = pnn = float("nan")
    return HrvStats(
        rmssd_ms=rmssd,
        pnn50_pct=pnn,
        std_ms=float(np.std(kept, ddof=1)),
        n_intervals=int(kept.size),
        n_differences=int(d.size),
    )


def build_pairs(det, ref, result, windows=None, ectopic=None, slope=1.0):
    """Collect (rri, ibi) pairs from consecutive matched beats.

    A reference interval ``r[j-1] -> r[j]`` pairs with the device interval
    ``d[i-1] -> d[i]`` when both endpoints are matched to each other and the
    device beats are adjacent. Pairs are kept when the window of the
    reference end beat is clean and the reference interval is not ectopic.
    ``det`` should carry the device's own timestamps; ``slope`` rescales its
    intervals to reference time without the per-window jumps of the
    aligned series.
    """
    r = ref.timestamps_ms.astype(np.int64)
    d = det.timestamps_ms.astype(np.int64)
    rp = result.ref_partner(r.size)
    j = np.arange(1, r.size)
    i = rp[1:]
    ok = (i >= 1) & (rp[:-1] >= 0)
    ok[ok] &= rp[:-1][ok] == i[ok] - 1
    j, i = j[ok], i[ok]
    rri = (r[j] - r[j - 1]).astype(float)
    ibi = (d[i] - d[i - 1]).astype(float) * slope
    end = r[j]
    n_cand = int(j.size)

    if windows:
        widx = window_index(end, windows)
        clean = np.array([w.clean for w in windows])[widx]
    else:
        widx = np.zeros(j.size, dtype=np.int64)
        clean = np.ones(j.size, dtype=bool)
    dropped_unclean = int(np.count_nonzero(~clean))
    keep = clean
    dropped_ectopic = 0
    if ectopic is not None:
        mask = ectopic.mask if isinstance(ectopic, EctopicExclusion) else np.asarray(ectopic, bool)
        ect = mask[j - 1]
        dropped_ectopic = int(np.count_nonzero(ect & keep))
        keep = keep & ~ect
    return PairSet(
        rri_ms=rri[keep],
        ibi_ms=ibi[keep],
        end_timestamp_ms=end[keep],
        window_index=widx[keep],
        ref_interval_index=(j - 1)[keep],
        det_interval_index=(i - 1)[keep],
        n_candidates=n_cand,
        dropped_unclean=dropped_unclean,
        dropped_ectopic=dropped_ectopic,
    )


def pooled_error_stats(pair_sets):
    """Error statistics over the union of several recordings' pairs."""
    pair_sets = [p for p in pair_sets if len(p)]
    if not pair_sets:
        raise EmptyPairSetError("no interval pairs in any recording")
    rri = np.concatenate([p.rri_ms for p in pair_sets])
    ibi = np.concatenate([p.ibi_ms for p in pair_sets])
    return error_stats(PairSet.from_arrays(rri, ibi))


def mean_of(stats):
    """Field-wise mean of per-recording stat records (NaN-aware)."""
    stats = list(stats)
    if not stats:
        return {}
    keys = stats[0].to_dict().keys()
    return {k: float(np.nanmean([s.to_dict()[k] for s in stats])) for k in keys}


class EctopicFilter(BaseEstimator, TransformerMixin):
    """Transformer form of :func:`exclude_ectopic`.

    ``transform`` takes one interval sequence and returns the intervals that
    survive; ``mask_`` keeps the exclusion mask of the last call.
    """

    def __init__(self, threshold=ECTOPIC_THRESHOLD, window=ECTOPIC_MEDIAN_WINDOW, require_compensatory=True):
        self.threshold = threshold
        self.window = window
        self.require_compensatory = require_compensatory

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        res = exclude_ectopic(X, self.threshold, self.window, self.require_compensatory)
        self.mask_ = res.mask
        return res.kept_intervals_ms


class HRVFeatures(BaseEstimator, TransformerMixin):
    """Map a list of interval sequences to an ``(n, 3)`` array of RMSSD, pNN50, STD."""

    feature_names = ("rmssd_ms", "pnn50_pct", "std_ms")

    def __init__(self, exclude_ectopic=True, threshold=ECTOPIC_THRESHOLD):
        self.exclude_ectopic = exclude_ectopic
        self.threshold = threshold

    def fit(self, X, y=None):
        self.n_features_out_ = 3
        return self

    def transform(self, X):
        rows = []
        for x in X:
            mask = exclude_ectopic(x, self.threshold).mask if self.exclude_ectopic else None
            h = hrv_stats(check_interval_array(x), mask)
            rows.append([h.rmssd_ms, h.pnn50_pct, h.std_ms])
        return np.asarray(rows, dtype=float).reshape(-1, 3)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self.feature_names, dtype=object)
