"""Beat series, interval views and minute windows.

All timestamps are integer milliseconds. Objects are immutable; the numpy
arrays they hold are marked read-only.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import NonMonotonicError, PhysiologicallyInvalidError, TooShortError

MIN_INTERVAL_MS = 200
MAX_INTERVAL_MS = 4000
WINDOW_LEN_MS = 60_000


class Source(str, enum.Enum):
    DEVICE = "DeviceUnderTest"
    REFERENCE = "Reference"


class Rhythm(str, enum.Enum):
    SR = "SR"
    AF = "AF"
    UNKNOWN = "Unknown"


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BeatSeries:
    """Strictly increasing beat times in ms plus provenance tags.

    ``flagged`` lists the indices of intervals (``timestamps_ms[i+1] -
    timestamps_ms[i]``) that fall outside the physiological bounds used at
    validation time. Build instances with :func:`validate_series`.
    """

    timestamps_ms: np.ndarray
    source: Source = Source.REFERENCE
    subject_id: str = ""
    rhythm_label: Rhythm | None = None
    flagged: tuple = field(default=())

    def __len__(self):
        return len(self.timestamps_ms)

    def __eq__(self, other):
        if not isinstance(other, BeatSeries):
            return NotImplemented
        return (
            np.array_equal(self.timestamps_ms, other.timestamps_ms)
            and self.source == other.source
            and self.subject_id == other.subject_id
            and self.rhythm_label == other.rhythm_label
            and tuple(self.flagged) == tuple(other.flagged)
        )

    __hash__ = None

    @property
    def duration_ms(self):
        return int(self.timestamps_ms[-1] - self.timestamps_ms[0])

    def with_timestamps(self, timestamps_ms, **kwargs):
        """Return a re-validated copy carrying the same tags."""
        return validate_series(
            timestamps_ms,
            kwargs.pop("source", self.source),
            subject_id=kwargs.pop("subject_id", self.subject_id),
            rhythm_label=kwargs.pop("rhythm_label", self.rhythm_label),
            **kwargs,
        )


@dataclass(frozen=True, eq=False)
class IntervalView:
    intervals_ms: np.ndarray
    end_timestamps_ms: np.ndarray

    def __len__(self):
        return len(self.intervals_ms)


@dataclass(frozen=True)
class MinuteWindow:
    index: int
    start_ms: int
    end_ms: int
    clean: bool = True
    partial: bool = False

    def contains(self, t):
        return self.start_ms <= t < self.end_ms


def validate_series(
    raw,
    source=Source.REFERENCE,
    *,
    subject_id="",
    rhythm_label=None,
    strict=False,
    bounds=(MIN_INTERVAL_MS, MAX_INTERVAL_MS),
):
    """Check raw beat times and wrap them in a :class:`BeatSeries`.

    Timestamps are rounded to whole milliseconds. Out-of-bounds intervals
    raise :class:`PhysiologicallyInvalidError` when ``strict`` is true and
    are recorded in ``BeatSeries.flagged`` otherwise.
    """
    if isinstance(raw, BeatSeries):
        raw = raw.timestamps_ms
    ts = np.asarray(raw, dtype=float).ravel()
    if ts.size < 2:
        raise TooShortError(f"need at least 2 beats, got {ts.size}")
    if not np.all(np.isfinite(ts)):
        raise NonMonotonicError("timestamps contain non-finite values")
    ts = np.rint(ts).astype(np.int64)
    d = np.diff(ts)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        i = int(bad[0])
        raise NonMonotonicError(
            f"timestamps not strictly increasing at index {i + 1} "
            f"({ts[i]} -> {ts[i + 1]})"
        )
    lo, hi = bounds
    out = np.flatnonzero((d < lo) | (d > hi))
    if out.size and strict:
        i = int(out[0])
        raise PhysiologicallyInvalidError(
            f"interval {int(d[i])} ms at index {i} outside [{lo}, {hi}] ms"
        )
    return BeatSeries(
        timestamps_ms=_frozen(ts),
        source=Source(source),
        subject_id=str(subject_id),
        rhythm_label=None if rhythm_label is None else Rhythm(rhythm_label),
        flagged=tuple(int(i) for i in out),
    )


def intervals(series):
    """Consecutive differences of a series and the time each one ends."""
    ts = series.timestamps_ms
    if len(ts) < 2:
        raise TooShortError("need at least 2 beats to form an interval")
    return IntervalView(_frozen(np.diff(ts)), _frozen(ts[1:]))


def windows(series, window_len_ms=WINDOW_LEN_MS):
    """Tile the recording into contiguous windows starting at the first beat.

    The last window is kept even when the recording stops before its end;
    it is then marked ``partial``.
    """
    if window_len_ms <= 0:
        raise ValueError("window_len_ms must be positive")
    ts = series.timestamps_ms if isinstance(series, BeatSeries) else np.asarray(series)
    t0, t1 = int(ts[0]), int(ts[-1])
    n = (t1 - t0) // window_len_ms + 1
    out = []
    for k in range(n):
        start = t0 + k * window_len_ms
        end = start + window_len_ms
        out.append(MinuteWindow(k, start, end, partial=(k == n - 1 and end > t1 + 1)))
    return out


def window_index(times_ms, windows_):
    """Index of the window holding each time; times outside map to the edge windows."""
    if not windows_:
        raise ValueError("no windows")
    origin = windows_[0].start_ms
    length = windows_[0].end_ms - windows_[0].start_ms
    idx = np.floor_divide(np.asarray(times_ms, dtype=float) - origin, length).astype(np.int64)
    return np.clip(idx, 0, len(windows_) - 1)


def set_clean(windows_, clean_flags):
    return [replace(w, clean=bool(c)) for w, c in zip(windows_, clean_flags)]
