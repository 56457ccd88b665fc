import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from ibival.beatmatch import mark_clean_windows, match
from ibival.core import IntervalView, Rhythm, Source, intervals, validate_series, windows
from ibival.exceptions import EmptyPairSetError, TooShortError
from ibival.metrics import (
    EctopicFilter,
    HRVFeatures,
    PairSet,
    bland_altman,
    build_pairs,
    error_stats,
    exclude_ectopic,
    hrv_stats,
    mean_of,
    pooled_error_stats,
    successive_differences,
)
from ibival.synth import SynthConfig, generate

from oracles import error_stats_exact, hrv_exact

ivals = st.lists(st.integers(300, 2000), min_size=3, max_size=80)
pair_lists = st.lists(st.tuples(st.integers(300, 2000), st.integers(300, 2000)), min_size=1, max_size=60)


def test_error_stats_example():
    pairs = [(1000, 1007), (990, 983), (1010, 1010)]
    es = error_stats(pairs)
    assert round(es.me_ms, 3) == 0.0
    assert round(es.mae_ms, 3) == 4.667
    assert round(es.rmse_ms, 3) == 5.715
    assert round(es.mape_pct, 3) == 0.469
    assert es.n_pairs == 3
    assert np.allclose([es.me_ms, es.mae_ms, es.mape_pct, es.rmse_ms], error_stats_exact(pairs))


def test_error_stats_identical_and_empty():
    es = error_stats([(800, 800), (900, 900)])
    assert (es.me_ms, es.mae_ms, es.mape_pct, es.rmse_ms) == (0, 0, 0, 0)
    with pytest.raises(EmptyPairSetError):
        error_stats(PairSet.from_arrays([], []))


def test_hrv_example():
    h = hrv_stats([1000, 1060, 1000])
    assert round(h.rmssd_ms, 3) == 60.0
    assert round(h.pnn50_pct, 3) == 100.0
    assert round(h.std_ms, 3) == 34.641
    assert h.n_intervals == 3


def test_hrv_constant_and_short():
    h = hrv_stats([900] * 10)
    assert (h.rmssd_ms, h.pnn50_pct, h.std_ms) == (0, 0, 0)
    with pytest.raises(TooShortError):
        hrv_stats([900])
    with pytest.raises(TooShortError):
        hrv_stats([900, 950, 1000], exclude=[True, True, False])


def test_pnn50_strict_threshold():
    # a difference of exactly 50 ms does not count
    assert hrv_stats([1000, 1050, 1101]).pnn50_pct == 50.0


def test_hrv_drops_differences_touching_excluded():
    x = [1000, 1000, 600, 1400, 1000, 1000]
    mask = [False, False, True, True, False, False]
    h = hrv_stats(x, mask)
    assert h.n_differences == 2 and h.rmssd_ms == 0.0
    assert successive_differences(x, ~np.array(mask)).tolist() == [0, 0]


def test_bland_altman_example_and_sign():
    ba = bland_altman([(1000, 1007), (990, 983)])
    assert ba.points.tolist() == [[1003.5, 7.0], [986.5, -7.0]]
    assert ba.bias_ms == 0.0
    short = bland_altman([(1000, 995), (900, 895), (1100, 1095)])
    assert short.bias_ms == -5.0
    assert short.loa_low_ms == short.loa_high_ms == -5.0
    with pytest.raises(EmptyPairSetError):
        bland_altman([(1000, 1000)])


def test_bland_altman_limits():
    ba = bland_altman([(1000, 1010), (1000, 990), (1000, 1004)])
    sd = np.std([10, -10, 4], ddof=1)
    assert ba.loa_high_ms == pytest.approx(ba.bias_ms + 1.96 * sd)
    assert ba.loa_low_ms < ba.bias_ms < ba.loa_high_ms


def test_ectopic_pattern_excluded():
    x = [1000] * 12 + [600, 1400] + [1000] * 6
    res = exclude_ectopic(x)
    assert res.excluded_indices.tolist() == [12, 13]
    assert res.kept_intervals_ms.size == len(x) - 2


def test_ectopic_uniform_nothing_excluded():
    assert exclude_ectopic([1000] * 50).n_excluded == 0


def test_ectopic_plain_rule_is_stricter_on_af():
    ref, _ = generate(SynthConfig(seed=1, rhythm="AF"))
    comp = exclude_ectopic(ref).fraction_excluded
    plain = exclude_ectopic(ref, require_compensatory=False).fraction_excluded
    assert comp < 0.05 < plain


def test_ectopic_af_under_five_percent():
    for seed in range(40):
        ref, _ = generate(SynthConfig(seed=seed, rhythm="AF"))
        assert exclude_ectopic(ref).fraction_excluded < 0.05


def test_ectopic_accepts_series_and_view():
    s = validate_series(np.r_[0, np.cumsum([1000] * 12 + [600, 1400] + [1000] * 3)])
    a = exclude_ectopic(s)
    b = exclude_ectopic(intervals(s))
    assert a.mask.tolist() == b.mask.tolist()


@given(pair_lists)
def test_norm_chain(pairs):
    es = error_stats(pairs)
    assert abs(es.me_ms) <= es.mae_ms + 1e-9
    assert es.mae_ms <= es.rmse_ms + 1e-9


@given(pair_lists.filter(lambda p: len(p) >= 2))
def test_bias_equals_me(pairs):
    ps = PairSet.from_arrays(*np.array(pairs).T)
    assert bland_altman(ps).bias_ms == error_stats(ps).me_ms


@given(ivals)
def test_hrv_matches_exact_oracle(x):
    h = hrv_stats(x)
    r, p, s = hrv_exact(x)
    assert h.rmssd_ms == pytest.approx(r, rel=1e-12, abs=1e-9)
    assert h.pnn50_pct == pytest.approx(p)
    assert h.std_ms == pytest.approx(s, rel=1e-12, abs=1e-9)
    assert h.rmssd_ms >= 0 and h.std_ms >= 0 and 0 <= h.pnn50_pct <= 100


@given(ivals, st.integers(-10**6, 10**6))
def test_hrv_time_shift_invariant(x, shift):
    ts = np.r_[0, np.cumsum(x)] + shift
    a = hrv_stats(validate_series(ts))
    b = hrv_stats(x)
    assert a == b


@given(ivals, st.floats(0.5, 3.0))
def test_hrv_scaling(x, k):
    x = np.asarray(x, dtype=float)
    assert hrv_stats(k * x).rmssd_ms == pytest.approx(k * hrv_stats(x).rmssd_ms, rel=1e-9, abs=1e-9)
    assert hrv_stats(k * x).std_ms == pytest.approx(k * hrv_stats(x).std_ms, rel=1e-9, abs=1e-9)


@given(pair_lists, st.floats(0.5, 3.0))
def test_error_scaling(pairs, k):
    a = np.asarray(pairs, dtype=float)
    es, esk = error_stats(a), error_stats(k * a)
    assert esk.mae_ms == pytest.approx(k * es.mae_ms, abs=1e-9)
    assert esk.rmse_ms == pytest.approx(k * es.rmse_ms, abs=1e-9)
    assert esk.me_ms == pytest.approx(k * es.me_ms, abs=1e-9)


def test_af_hrv_exceeds_sr():
    for seed in range(20):
        sr, _ = generate(SynthConfig(seed=seed))
        af, _ = generate(SynthConfig(seed=seed, rhythm="AF"))
        hs, ha = hrv_stats(sr), hrv_stats(af)
        assert ha.rmssd_ms > hs.rmssd_ms and ha.pnn50_pct > hs.pnn50_pct and ha.std_ms > hs.std_ms


def test_build_pairs_uses_clean_windows_and_slope():
    ref = validate_series(np.arange(0, 180_001, 1000))
    det_ts = ref.timestamps_ms.tolist()
    det_ts.insert(70, 69_500)  # extra beat in minute 1
    det = validate_series(det_ts, Source.DEVICE)
    wins = windows(ref)
    res = match(det, ref, wins)
    wins = mark_clean_windows(res, wins)
    assert [w.clean for w in wins] == [True, False, True, True]
    ps = build_pairs(det, ref, res, wins)
    assert set(ps.window_index.tolist()) == {0, 2, 3}
    assert ps.dropped_unclean > 0
    assert np.all(ps.rri_ms == 1000) and np.all(ps.ibi_ms == 1000)
    scaled = build_pairs(det, ref, res, wins, slope=1.001)
    assert np.allclose(scaled.ibi_ms, 1001.0)


def test_build_pairs_drops_ectopic():
    x = [1000] * 20 + [600, 1400] + [1000] * 20
    ref = validate_series(np.r_[0, np.cumsum(x)])
    det = validate_series(ref.timestamps_ms, Source.DEVICE)
    res = match(det, ref)
    ps = build_pairs(det, ref, res, ectopic=exclude_ectopic(ref))
    assert ps.dropped_ectopic == 2
    assert len(ps) == len(x) - 2
    assert ps.provenance()["n_candidates"] == len(x)


def test_pooled_vs_mean():
    a = PairSet.from_arrays([1000, 1000], [1010, 1010])
    b = PairSet.from_arrays([1000] * 8, [1000] * 8)
    pooled = pooled_error_stats([a, b])
    assert pooled.mae_ms == 2.0
    assert mean_of([error_stats(a), error_stats(b)])["mae_ms"] == 5.0


def test_transformers():
    x = [1000] * 12 + [600, 1400] + [1000] * 6
    f = EctopicFilter()
    assert clone(f).get_params() == f.get_params()
    assert f.fit_transform(x).size == len(x) - 2
    hf = HRVFeatures().fit([x])
    out = hf.transform([x, [1000, 1060, 1000]])
    assert out.shape == (2, 3)
    assert out[0].tolist() == [0.0, 0.0, 0.0]
    assert list(hf.get_feature_names_out()) == ["rmssd_ms", "pnn50_pct", "std_ms"]
