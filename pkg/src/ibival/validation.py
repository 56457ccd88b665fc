"""Input checks shared by the estimators and functional API."""
from __future__ import annotations

import numpy as np

from .core import BeatSeries, IntervalView, Rhythm, Source, intervals, validate_series
from .exceptions import TooShortError, ValidationError


def check_interval_array(x, min_length=2):
    """Return ``x`` as a 1-D float array of positive, finite intervals (ms).

    Accepts a plain sequence, an :class:`IntervalView` or a
    :class:`BeatSeries` (whose intervals are taken).
    """
    if isinstance(x, BeatSeries):
        x = intervals(x).intervals_ms
    elif isinstance(x, IntervalView):
        x = x.intervals_ms
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValidationError(f"intervals must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("intervals contain NaN or inf")
    if np.any(a <= 0):
        raise ValidationError("intervals must be positive")
    if a.size < min_length:
        raise TooShortError(f"need at least {min_length} intervals, got {a.size}")
    return a


def check_series(x, source=Source.REFERENCE):
    """Pass a :class:`BeatSeries` through; validate anything else as timestamps."""
    if isinstance(x, BeatSeries):
        return x
    return validate_series(x, source)


def check_rhythm_labels(y):
    """Normalize labels such as ``"af"``, ``Rhythm.SR`` or ``1``/``0`` to :class:`Rhythm`."""
    out = []
    for v in y:
        if isinstance(v, Rhythm):
            out.append(v)
        elif isinstance(v, (bool, np.bool_)) or isinstance(v, (int, np.integer)):
            out.append(Rhythm.AF if int(v) else Rhythm.SR)
        else:
            s = str(v).strip().upper()
            if s not in ("SR", "AF"):
                raise ValidationError(f"unknown rhythm label {v!r}")
            out.append(Rhythm(s))
    return out
