import numpy as np
import pytest

from ibival.core import (
    BeatSeries,
    Rhythm,
    Source,
    intervals,
    set_clean,
    validate_series,
    window_index,
    windows,
)
from ibival.exceptions import NonMonotonicError, PhysiologicallyInvalidError, TooShortError


def test_intervals_are_exact_differences(series):
    s = series([0, 1000, 1800, 2900])
    iv = intervals(s)
    assert iv.intervals_ms.tolist() == [1000, 800, 1100]
    assert iv.end_timestamps_ms.tolist() == [1000, 1800, 2900]
    assert len(iv) == len(s) - 1


def test_non_monotonic_rejected():
    with pytest.raises(NonMonotonicError, match="index 2"):
        validate_series([0, 1000, 1000])
    with pytest.raises(NonMonotonicError):
        validate_series([0, 1000, 900])


def test_too_short():
    with pytest.raises(TooShortError):
        validate_series([5])
    with pytest.raises(TooShortError):
        validate_series([])


def test_out_of_bounds_flagged_or_rejected():
    s = validate_series([0, 150, 1150, 6000])
    assert s.flagged == (0, 2)
    with pytest.raises(PhysiologicallyInvalidError, match="150 ms"):
        validate_series([0, 150, 1150], strict=True)


def test_bounds_inclusive():
    s = validate_series([0, 200, 4200], strict=True)
    assert s.flagged == ()


def test_series_is_immutable(series):
    s = series([0, 1000, 2000])
    with pytest.raises(ValueError):
        s.timestamps_ms[0] = 5
    with pytest.raises(Exception):
        s.subject_id = "x"


def test_tags_and_equality():
    a = validate_series([0, 1000], Source.DEVICE, subject_id="S1", rhythm_label="AF")
    b = validate_series(np.array([0.0, 1000.0]), "DeviceUnderTest", subject_id="S1", rhythm_label=Rhythm.AF)
    assert a == b
    assert a.source is Source.DEVICE and a.rhythm_label is Rhythm.AF
    assert a != validate_series([0, 1000], Source.REFERENCE, subject_id="S1", rhythm_label="AF")
    assert isinstance(a, BeatSeries)


def test_ninety_minute_recording_has_ninety_windows():
    s = validate_series(np.arange(0, 90 * 60_000, 1000))
    w = windows(s)
    assert len(w) == 90
    assert all(b.start_ms == a.end_ms for a, b in zip(w[:-1], w[1:]))


@pytest.mark.parametrize("last,n,partial", [(59_999, 1, False), (60_001, 2, True)])
def test_window_count_edges(last, n, partial):
    ts = np.r_[np.arange(0, last, 1000), last]
    w = windows(validate_series(np.unique(ts)))
    assert len(w) == n
    assert w[-1].partial == partial


def test_window_index_and_clean_flags():
    s = validate_series(np.arange(0, 180_001, 1000))
    w = windows(s)
    idx = window_index([0, 59_999, 60_000, 179_999, 10**7], w)
    assert idx.tolist() == [0, 0, 1, 2, len(w) - 1]
    w2 = set_clean(w, [True, False, True, True])
    assert [x.clean for x in w2] == [True, False, True, True]
    assert all(x.clean for x in w)


def test_rounding_to_whole_ms():
    s = validate_series([0.4, 1000.6])
    assert s.timestamps_ms.tolist() == [0, 1001]


def test_windows_cover_every_beat_once():
    ts = np.cumsum(np.random.default_rng(3).integers(300, 1500, 400))
    s = validate_series(ts)
    w = windows(s)
    hits = [sum(x.contains(t) for x in w) for t in s.timestamps_ms]
    assert set(hits) == {1}


def test_validation_idempotent_and_cumsum_identity(series):
    s = series([100, 900, 1750, 2500])
    assert validate_series(s, s.source) == s
    iv = intervals(s)
    assert (s.timestamps_ms[0] + np.r_[0, np.cumsum(iv.intervals_ms)]).tolist() == s.timestamps_ms.tolist()


def test_spec_interval_example(series):
    iv = intervals(series([0, 800, 1650]))
    assert iv.intervals_ms.tolist() == [800, 850]
    with pytest.raises(PhysiologicallyInvalidError):
        validate_series([0, 100, 200], strict=True)
