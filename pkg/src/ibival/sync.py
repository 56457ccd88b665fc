"""Clock alignment of a device beat series onto the reference timeline.

The device clock is modelled as ``t_ref = slope * t_dev + offset`` plus a
small residual offset per reference window. Every stage minimizes the same
objective: the mean absolute difference between each mapped device beat and
its nearest reference beat, with the per-beat error capped so unmatched
beats cost a constant.

Search is an exhaustive coarse-to-fine grid. Offsets are searched about a
pivot at the middle of the device recording, which decouples offset from
slope; the reported ``offset_ms`` is converted back to ``t = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import WINDOW_LEN_MS, BeatSeries, window_index, windows as make_windows
from .exceptions import DegenerateSearchError, NoOverlapError, NonMonotonicError

logger = logging.getLogger(__name__)

PPM = 1e-6
_MAX_NEIGHBOURS = 16


@dataclass(frozen=True)
class SearchConfig:
    offset_range_ms: float = 60_000.0
    offset_step_ms: float = 100.0
    slope_range_ppm: float = 500.0
    slope_step_ppm: float = 10.0
    fine_offset_range_ms: float = 200.0
    fine_offset_step_ms: float = 1.0
    fine_slope_range_ppm: float = 20.0
    fine_slope_step_ppm: float = 1.0
    pair_cap_ms: float = 500.0
    window_offset_range_ms: float = 250.0
    window_offset_step_ms: float = 1.0
    min_window_beats: int = 10
    coarse_resolution_ms: float = 10.0
    n_candidates: int = 3
    screen_slope_step_ppm: float = 5.0
    coarse_fit_beats: int = 512
    fine_fit_beats: int = 256

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return SearchConfig(**d)


@dataclass(frozen=True)
class ClockMap:
    """Device-to-reference time map.

    ``per_window_offset_ms`` is empty for a global-only map. Window ``k``
    covers reference times ``[window_origin_ms + k*window_len_ms, +window_len_ms)``;
    a beat's window is chosen from its globally mapped time.
    """

    slope: float = 1.0
    offset_ms: float = 0.0
    per_window_offset_ms: tuple = ()
    window_origin_ms: int = 0
    window_len_ms: int = WINDOW_LEN_MS

    @property
    def complete(self):
        return len(self.per_window_offset_ms) > 0

    @property
    def slope_ppm(self):
        return (self.slope - 1.0) / PPM

    def global_times(self, t):
        return self.slope * np.asarray(t, dtype=float) + self.offset_ms

    def map_times(self, t):
        g = self.global_times(t)
        if not self.complete:
            return g
        pw = np.asarray(self.per_window_offset_ms, dtype=float)
        k = np.floor_divide(g - self.window_origin_ms, self.window_len_ms).astype(np.int64)
        return g + pw[np.clip(k, 0, pw.size - 1)]

    def to_dict(self):
        return {
            "slope": self.slope,
            "slope_ppm": self.slope_ppm,
            "offset_ms": self.offset_ms,
            "per_window_offset_ms": list(self.per_window_offset_ms),
            "window_origin_ms": self.window_origin_ms,
            "window_len_ms": self.window_len_ms,
        }


@dataclass(frozen=True)
class SyncReport:
    global_mae_before_ms: float
    global_mae_after_ms: float
    mae_after_global_ms: float
    per_window_mae_ms: tuple = ()
    per_window_matched: tuple = ()
    inherited_windows: tuple = ()
    coarse_grid_shape: tuple = ()
    fine_grid_shape: tuple = ()
    n_evaluations: int = 0
    candidates: tuple = field(default=())

    def to_dict(self):
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _grid(half_range, step):
    if not (step > 0) or half_range < 0 or not np.isfinite(half_range):
        raise DegenerateSearchError(f"empty search grid (range={half_range}, step={step})")
    n = int(np.floor(half_range / step + 1e-9))
    return np.arange(-n, n + 1, dtype=float) * step


def _times(x):
    if isinstance(x, BeatSeries):
        return x.timestamps_ms.astype(float)
    return np.asarray(x, dtype=float)


def nearest_residuals(q, ref):
    """Absolute distance from each time in ``q`` to the closest time in ``ref``."""
    j = np.searchsorted(ref, q)
    left = ref[np.clip(j - 1, 0, ref.size - 1)]
    right = ref[np.clip(j, 0, ref.size - 1)]
    return np.minimum(np.abs(q - left), np.abs(right - q))


def alignment_mae(det, ref, slope=1.0, offset_ms=0.0, cap_ms=500.0):
    """Capped nearest-beat MAE of ``det`` mapped by ``(slope, offset)`` against ``ref``."""
    t, r = _times(det), _times(ref)
    res = nearest_residuals(slope * t + offset_ms, r)
    return float(np.mean(np.minimum(res, cap_ms)))


def _subsample(t, m):
    if t.size <= m:
        return t
    idx = np.unique(np.linspace(0, t.size - 1, m).round().astype(np.int64))
    return t[idx]


def _neighbour_matrix(r, q, span):
    """Reference times that can be nearest to any point within ``q +- span``."""
    lo = np.searchsorted(r, q - span, side="right") - 1
    hi = np.searchsorted(r, q + span, side="left")
    k = int(min(max(1, np.max(hi - lo + 1)), _MAX_NEIGHBOURS))
    idx = np.clip(lo[:, None] + np.arange(k)[None, :], 0, r.size - 1)
    return r[idx]


def _key(obj, offset, slope):
    # equal objectives: prefer smallest |offset|, then smallest |slope - 1|
    return (round(float(obj), 9), abs(round(float(offset), 9)), abs(round(float(slope) - 1.0, 12)))


def _box(a, w):
    """Centred moving sum of odd width ``w`` along the last axis."""
    h = w // 2
    cs = np.cumsum(np.pad(a, [(0, 0), (h + 1, h)]), axis=1)
    return cs[:, w:] - cs[:, :-w]


def _coarse_scores(u, r, p, slopes, c_grid, step, resolution):
    """Score every coarse (slope, offset) cell by its best sub-offset.

    Each (device beat, reference beat) pair casts a unit vote at its exact
    pivot offset, split linearly between the two nearest ``resolution``-ms
    bins and then spread by a triangular kernel reaching about half a coarse
    step. A cell's score is its best bin; it is returned as an MAE-like cost
    ``(step / 2) * (1 - votes / m)`` together with the bin offset achieving it,
    so coarse quantization never penalizes the true alignment against a
    one-beat alias.
    """
    m = u.size
    sub = max(1, int(round(step / resolution)))
    res = step / sub
    f_grid_lo = c_grid[0] - step / 2
    gf = c_grid.size * sub
    smin, smax = slopes.min(), slopes.max()
    lo_q = np.minimum(smin * u, smax * u) + p + f_grid_lo - step
    hi_q = np.maximum(smin * u, smax * u) + p + f_grid_lo + gf * res + step
    lo = np.searchsorted(r, lo_q, side="left")
    hi = np.searchsorted(r, hi_q, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        raise NoOverlapError("device and reference beats never overlap within the search range")
    ii = np.repeat(np.arange(m), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    jj = lo[ii] + (np.arange(total) - starts)
    rp = (r[jj] - p - f_grid_lo) / res
    uu = u[ii] / res
    votes = np.empty((slopes.size, gf))
    # floor index shifted by +1 into bins [0, gf+2]; pairs out of reach for this slope get weight 0
    idx = np.empty(2 * total, dtype=np.int64)
    w = np.empty(2 * total)
    for k, s in enumerate(slopes):
        x = rp - s * uu
        k0 = np.floor(x)
        frac = x - k0
        out = (k0 < -1) | (k0 > gf)
        idx[:total] = np.clip(k0, -1, gf).astype(np.int64) + 1
        idx[total:] = idx[:total] + 1
        w[:total] = 1.0 - frac
        w[total:] = frac
        w[:total][out] = 0.0
        w[total:][out] = 0.0
        votes[k] = np.bincount(idx, weights=w, minlength=gf + 3)[1 : gf + 1]
    half = max(1, sub // 4) * 2 + 1
    votes = _box(_box(votes, half), half) / half**2
    cells = votes.reshape(slopes.size, c_grid.size, sub)
    best = cells.argmax(axis=2)
    score = np.take_along_axis(cells, best[:, :, None], axis=2)[:, :, 0]
    sub_offset = f_grid_lo + (np.arange(c_grid.size)[None, :] * sub + best) * res
    cost = (step / 2) * (1.0 - np.minimum(score / m, 1.0))
    return cost, np.round(sub_offset, 9)


def _fine_scores(u, r, p, s0, c0, slope_grid, offset_grid, cap):
    """Capped MAE for every (slope, pivot offset) on the fine grid."""
    q0 = s0 * u + p + c0
    span = offset_grid[-1] + np.abs(slope_grid).max() * np.abs(u) + 1.0
    nb = _neighbour_matrix(r, q0, span) - p  # (m, k)
    c = c0 + offset_grid
    out = np.empty((slope_grid.size, offset_grid.size))
    buf = np.empty((nb.shape[0], nb.shape[1], c.size))
    for k, ds in enumerate(slope_grid):
        a = nb - (s0 + ds) * u[:, None]  # residual offsets, (m, k)
        np.subtract(a[:, :, None], c[None, None, :], out=buf)
        np.abs(buf, out=buf)
        d = buf.min(axis=1)
        np.minimum(d, cap, out=d)
        out[k] = d.mean(axis=0)
    return out


def estimate_global_alignment(det, ref, search=None, return_report=False):
    """Find the ``(slope, offset)`` that best maps ``det`` onto ``ref``.

    Coarse stage scans the full slope x offset grid on a subsample of
    device beats. The best few well-separated coarse cells (aliases one beat
    apart look alike on a coarse grid) are each scanned along offset at
    fine resolution; the winner gets the full fine 2-D scan. The final
    choice is checked against the identity map on all beats, so the
    returned map never scores worse than doing nothing.
    """
    search = search or SearchConfig()
    t, r = _times(det), _times(ref)
    if t.size < 2 or r.size < 2:
        raise NoOverlapError("series too short to align")
    p = float(np.round((t[0] + t[-1]) / 2.0))
    cap = search.pair_cap_ms

    slopes = 1.0 + _grid(search.slope_range_ppm, search.slope_step_ppm) * PPM
    c_grid = _grid(search.offset_range_ms, search.offset_step_ms)
    fine_s = _grid(search.fine_slope_range_ppm, search.fine_slope_step_ppm) * PPM
    fine_c = _grid(search.fine_offset_range_ms, search.fine_offset_step_ms)

    u = _subsample(t, search.coarse_fit_beats) - p
    coarse, sub_off = _coarse_scores(
        u, r, p, slopes, c_grid, search.offset_step_ms, search.coarse_resolution_ms
    )
    u = _subsample(t, search.fine_fit_beats) - p
    n_eval = coarse.size

    # pick distinct coarse cells, suppressing offsets near earlier picks
    if not np.any(coarse < search.offset_step_ms / 2):
        raise NoOverlapError("no device beat comes near a reference beat for any candidate map")
    off0 = sub_off + p * (1.0 - slopes[:, None])
    dslope = np.broadcast_to(np.abs(slopes - 1.0)[:, None], coarse.shape)
    order = np.lexsort(
        (np.round(dslope, 12).ravel(), np.round(np.abs(off0), 9).ravel(), np.round(coarse, 9).ravel())
    )
    picked = []
    for flat in order:
        a, b = divmod(int(flat), c_grid.size)
        c = sub_off[a, b]
        if all(abs(c - pc) > search.fine_offset_range_ms for _, _, pc in picked):
            picked.append((coarse[a, b], a, c))
        if len(picked) >= search.n_candidates:
            break

    # screen each candidate on a thinned fine box, then scan the winner in full
    screen_s = _grid(search.fine_slope_range_ppm, max(search.screen_slope_step_ppm, search.fine_slope_step_ppm)) * PPM
    screened = []
    for _, a, c in picked:
        s0, c0 = slopes[a], float(np.round(c))
        box = _fine_scores(u, r, p, s0, c0, screen_s, fine_c, cap)
        n_eval += box.size
        ka, kb = min(
            ((i, j) for i in range(box.shape[0]) for j in np.flatnonzero(box[i] <= box.min() + 1e-9)),
            key=lambda ij: _key(box[ij], c0 + fine_c[ij[1]] + p * (1 - s0 - screen_s[ij[0]]), s0 + screen_s[ij[0]]),
        )
        screened.append((box[ka, kb], s0 + screen_s[ka], c0 + fine_c[kb]))
    screened.sort(key=lambda x: _key(x[0], x[2] + p * (1 - x[1]), x[1]))
    _, s0, c0 = screened[0]

    fine = _fine_scores(u, r, p, s0, c0, fine_s, fine_c, cap)
    n_eval += fine.size
    best = None
    for a in range(fine.shape[0]):
        s = s0 + fine_s[a]
        for b in np.flatnonzero(fine[a] <= fine.min() + 1e-9):
            key = _key(fine[a, b], c0 + fine_c[b] + p * (1 - s), s)
            if best is None or key < best[0]:
                best = (key, s, c0 + fine_c[b])
    _, slope, c = best
    offset = float(c + p * (1.0 - slope))
    slope = float(slope)

    before = alignment_mae(t, r, 1.0, 0.0, cap)
    after = alignment_mae(t, r, slope, offset, cap)
    n_eval += 2
    if after >= cap:
        raise NoOverlapError("no device beat lies within the pairing cap of a reference beat")
    if before <= after:
        slope, offset, after = 1.0, 0.0, before

    cmap = ClockMap(slope=slope, offset_ms=offset)
    logger.debug("global alignment slope=%.7f offset=%.1f mae %.2f -> %.2f", slope, offset, before, after)
    if not return_report:
        return cmap
    report = {
        "global_mae_before_ms": before,
        "global_mae_after_ms": after,
        "coarse_grid_shape": coarse.shape,
        "fine_grid_shape": fine.shape,
        "n_evaluations": n_eval,
        "candidates": tuple(
            (float(o), float(s), float(cc + p * (1 - s))) for o, s, cc in screened
        ),
    }
    return cmap, report


def _window_offsets(det, ref, cmap, windows_, search):
    t, r = _times(det), _times(ref)
    cap = search.pair_cap_ms
    offs = _grid(search.window_offset_range_ms, search.window_offset_step_ms)
    g = cmap.global_times(t)
    widx = window_index(g, windows_)
    matched0 = nearest_residuals(g, r) <= cap
    nb = _neighbour_matrix(r, g, offs[-1] + 1.0)
    res = nb - g[:, None]  # (n, k)

    n_w = len(windows_)
    best = np.full(n_w, np.nan)
    mae = np.full(n_w, np.nan)
    n_matched = np.zeros(n_w, dtype=np.int64)
    for w in range(n_w):
        sel = widx == w
        n_matched[w] = int(np.count_nonzero(matched0 & sel))
        if n_matched[w] < search.min_window_beats:
            continue
        d = np.abs(res[sel][:, :, None] - offs[None, None, :]).min(axis=1)
        obj = np.minimum(d, cap).mean(axis=0)
        k = min(np.flatnonzero(obj <= obj.min() + 1e-9), key=lambda i: abs(offs[i]))
        best[w] = offs[k]
        mae[w] = obj[k]

    inherited = tuple(int(w) for w in np.flatnonzero(np.isnan(best)))
    resolved = np.flatnonzero(~np.isnan(best))
    for w in inherited:
        prev = resolved[resolved < w]
        nxt = resolved[resolved > w]
        if prev.size:
            best[w] = best[prev[-1]]
        elif nxt.size:
            best[w] = best[nxt[0]]
        else:
            best[w] = 0.0
        sel = widx == w
        if np.any(sel):
            d = nearest_residuals(g[sel] + best[w], r)
            mae[w] = float(np.mean(np.minimum(d, cap)))
    return best, mae, n_matched, inherited


def refine_per_window(det, ref, cmap, windows_=None, search=None, return_report=False):
    """Add a residual offset per reference window to a global map.

    Each window's offset minimizes the capped MAE of the device beats that
    fall in it. Windows with fewer than ``min_window_beats`` matched device
    beats take the previous window's offset (the next one's at the start).
    """
    search = search or SearchConfig()
    if windows_ is None:
        windows_ = make_windows(ref)
    best, mae, n_matched, inherited = _window_offsets(det, ref, cmap, windows_, search)
    origin = windows_[0].start_ms
    length = windows_[0].end_ms - windows_[0].start_ms
    full = ClockMap(cmap.slope, cmap.offset_ms, tuple(float(x) for x in best), origin, length)
    t, r = _times(det), _times(ref)
    before = alignment_mae(t, r, 1.0, 0.0, search.pair_cap_ms)
    after = float(np.mean(np.minimum(nearest_residuals(full.map_times(t), r), search.pair_cap_ms)))
    if after > before:
        # pathological inherited offsets; never leave the series worse than unaligned
        full = ClockMap(cmap.slope, cmap.offset_ms, (0.0,) * len(windows_), origin, length)
        after = alignment_mae(t, r, cmap.slope, cmap.offset_ms, search.pair_cap_ms)
    if not return_report:
        return full
    return full, {
        "mae_after_ms": after,
        "per_window_mae_ms": tuple(float(x) for x in mae),
        "per_window_matched": tuple(int(x) for x in n_matched),
        "inherited_windows": inherited,
    }


def apply(cmap, det):
    """Map device beat times onto the reference clock (rounded to whole ms)."""
    t = cmap.map_times(det.timestamps_ms)
    ts = np.rint(t).astype(np.int64)
    d = np.diff(ts)
    if np.any(d <= 0):
        i = int(np.flatnonzero(d <= 0)[0])
        raise NonMonotonicError(
            f"clock map reorders beats {i} and {i + 1} "
            f"({ts[i]} -> {ts[i + 1]}); reduce window_offset_range_ms"
        )
    return det.with_timestamps(ts)


def synchronize(det, ref, search=None, windows_=None):
    """Global alignment followed by per-window refinement.

    Returns ``(clock_map, sync_report)``.
    """
    search = search or SearchConfig()
    gmap, g = estimate_global_alignment(det, ref, search, return_report=True)
    full, w = refine_per_window(det, ref, gmap, windows_, search, return_report=True)
    report = SyncReport(
        global_mae_before_ms=g["global_mae_before_ms"],
        global_mae_after_ms=w["mae_after_ms"],
        mae_after_global_ms=g["global_mae_after_ms"],
        per_window_mae_ms=w["per_window_mae_ms"],
        per_window_matched=w["per_window_matched"],
        inherited_windows=w["inherited_windows"],
        coarse_grid_shape=tuple(g["coarse_grid_shape"]),
        fine_grid_shape=tuple(g["fine_grid_shape"]),
        n_evaluations=int(g["n_evaluations"]),
        candidates=g["candidates"],
    )
    return full, report


class ClockAligner(BaseEstimator):
    """Estimator wrapper: ``fit(det, ref)`` learns the clock map, ``transform`` applies it.

    Parameters mirror :class:`SearchConfig`; ``per_window=False`` stops after
    the global linear fit.
    """

    def __init__(
        self,
        offset_range_ms=60_000.0,
        offset_step_ms=100.0,
        slope_range_ppm=500.0,
        slope_step_ppm=10.0,
        fine_offset_range_ms=200.0,
        fine_slope_range_ppm=20.0,
        window_offset_range_ms=250.0,
        pair_cap_ms=500.0,
        min_window_beats=10,
        window_len_ms=WINDOW_LEN_MS,
        per_window=True,
    ):
        self.offset_range_ms = offset_range_ms
        self.offset_step_ms = offset_step_ms
        self.slope_range_ppm = slope_range_ppm
        self.slope_step_ppm = slope_step_ppm
        self.fine_offset_range_ms = fine_offset_range_ms
        self.fine_slope_range_ppm = fine_slope_range_ppm
        self.window_offset_range_ms = window_offset_range_ms
        self.pair_cap_ms = pair_cap_ms
        self.min_window_beats = min_window_beats
        self.window_len_ms = window_len_ms
        self.per_window = per_window

    def _search(self):
        return SearchConfig(
            offset_range_ms=self.offset_range_ms,
            offset_step_ms=self.offset_step_ms,
            slope_range_ppm=self.slope_range_ppm,
            slope_step_ppm=self.slope_step_ppm,
            fine_offset_range_ms=self.fine_offset_range_ms,
            fine_slope_range_ppm=self.fine_slope_range_ppm,
            window_offset_range_ms=self.window_offset_range_ms,
            pair_cap_ms=self.pair_cap_ms,
            min_window_beats=self.min_window_beats,
        )

    def fit(self, X, y):
        search = self._search()
        self.windows_ = make_windows(y, self.window_len_ms)
        if self.per_window:
            self.clock_map_, self.report_ = synchronize(X, y, search, self.windows_)
        else:
            self.clock_map_, g = estimate_global_alignment(X, y, search, return_report=True)
            self.report_ = SyncReport(
                global_mae_before_ms=g["global_mae_before_ms"],
                global_mae_after_ms=g["global_mae_after_ms"],
                mae_after_global_ms=g["global_mae_after_ms"],
                coarse_grid_shape=tuple(g["coarse_grid_shape"]),
                fine_grid_shape=tuple(g["fine_grid_shape"]),
                n_evaluations=int(g["n_evaluations"]),
                candidates=g["candidates"],
            )
        return self

    def transform(self, X):
        check_is_fitted(self, "clock_map_")
        return apply(self.clock_map_, X)

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)
