"""Beat-level comparison of a device series against the reference.

Each device beat at time ``t`` with preceding interval ``l`` accepts
reference beats in ``[t - l/2, t + l/2]`` (the first beat borrows the
following interval). Device beats paired with a reference beat are correct,
unpaired ones are extra, and reference beats left unpaired are missing.

Pairing is one-to-one. The default ``"optimal"`` strategy pairs as many
beats as the windows allow and, among such pairings, minimizes the summed
time distance. Overlapping windows form small independent clusters, so the
exact solve runs per cluster and stays linear overall. ``"greedy"`` walks
device beats in time order, each claiming its nearest unclaimed candidate;
it is faster to reason about but can starve a later beat.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import set_clean, window_index
from .exceptions import EmptySeriesError, UnalignedWarning
from .sync import nearest_residuals

CORRECT = "correct"
EXTRA = "extra"
MISSING = "missing"

UNALIGNED_MAE_MS = 200.0


@dataclass(frozen=True)
class DetectionCounts:
    total_ref: int = 0
    total_det: int = 0
    correct: int = 0
    extra: int = 0
    missing: int = 0

    def __add__(self, other):
        return DetectionCounts(
            self.total_ref + other.total_ref,
            self.total_det + other.total_det,
            self.correct + other.correct,
            self.extra + other.extra,
            self.missing + other.missing,
        )

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class MatchResult:
    pairs: np.ndarray  # (n, 2) of (ref_index, det_index), ascending
    extra_det_indices: np.ndarray
    missing_ref_indices: np.ndarray
    counts: DetectionCounts
    per_window_counts: tuple = field(default=())

    def det_partner(self, n_det):
        """Array mapping each device beat to its reference partner, -1 if extra."""
        out = np.full(n_det, -1, dtype=np.int64)
        out[self.pairs[:, 1]] = self.pairs[:, 0]
        return out

    def ref_partner(self, n_ref):
        out = np.full(n_ref, -1, dtype=np.int64)
        out[self.pairs[:, 0]] = self.pairs[:, 1]
        return out


@dataclass(frozen=True)
class DetectionSummary:
    correct_pct: float
    extra_pct: float
    missing_pct: float
    counts: DetectionCounts

    def to_dict(self):
        return {
            "correct_pct": self.correct_pct,
            "extra_pct": self.extra_pct,
            "missing_pct": self.missing_pct,
            **{f"n_{k}": v for k, v in self.counts.to_dict().items()},
        }


def detection_windows(det_t):
    """Half-widths of the acceptance window around each device beat."""
    d = np.diff(det_t)
    l = np.empty(det_t.size, dtype=float)
    l[1:] = d
    l[0] = d[0] if d.size else 0.0
    return 0.5 * l


def match(det, ref, windows=None, *, strategy="optimal", check_alignment=True):
    """Classify device and reference beats as correct / extra / missing."""
    t = det.timestamps_ms.astype(np.int64)
    r = ref.timestamps_ms.astype(np.int64)
    if t.size == 0 or r.size == 0:
        raise EmptySeriesError("cannot match an empty series")
    if check_alignment:
        mae = float(np.mean(nearest_residuals(t.astype(float), r.astype(float))))
        if mae > UNALIGNED_MAE_MS:
            warnings.warn(
                f"mean nearest-beat distance {mae:.0f} ms exceeds {UNALIGNED_MAE_MS:.0f} ms; "
                "were the series synchronized?",
                UnalignedWarning,
                stacklevel=2,
            )

    half = detection_windows(t.astype(float))
    # twice the window bounds keeps the arithmetic in integers
    t2 = 2 * t
    lo = np.searchsorted(2 * r, t2 - 2 * half, side="left")
    hi = np.searchsorted(2 * r, t2 + 2 * half, side="right")

    if strategy == "greedy":
        partner, claimed = _greedy(t, r, lo, hi)
    elif strategy == "optimal":
        partner, claimed = _optimal(t, r, lo, hi)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    det_idx = np.flatnonzero(partner >= 0)
    pairs = np.stack([partner[det_idx], det_idx], axis=1) if det_idx.size else np.empty((0, 2), dtype=np.int64)
    extra = np.flatnonzero(partner < 0)
    missing = np.flatnonzero(~claimed)
    counts = DetectionCounts(
        total_ref=int(r.size),
        total_det=int(t.size),
        correct=int(det_idx.size),
        extra=int(extra.size),
        missing=int(missing.size),
    )
    per_window = ()
    if windows:
        per_window = _per_window_counts(t, r, partner, claimed, windows)
    return MatchResult(pairs, extra, missing, counts, per_window)


def _greedy(t, r, lo, hi):
    claimed = np.zeros(r.size, dtype=bool)
    partner = np.full(t.size, -1, dtype=np.int64)
    for i in range(t.size):
        best, best_d = -1, None
        for j in range(lo[i], hi[i]):
            if claimed[j]:
                continue
            dj = abs(int(r[j]) - int(t[i]))
            if best_d is None or dj < best_d:
                best, best_d = j, dj
        if best >= 0:
            claimed[best] = True
            partner[i] = best
    return partner, claimed


def _clusters(lo, hi):
    """Group device beats whose candidate reference ranges share a beat."""
    has = np.flatnonzero(hi > lo)
    order = has[np.argsort(lo[has], kind="stable")]
    groups = []
    cur, cur_hi = [], -1
    for i in order:
        if cur and lo[i] >= cur_hi:
            groups.append(cur)
            cur, cur_hi = [], -1
        cur.append(int(i))
        cur_hi = max(cur_hi, int(hi[i]))
    if cur:
        groups.append(cur)
    return groups


def _optimal(t, r, lo, hi):
    claimed = np.zeros(r.size, dtype=bool)
    partner = np.full(t.size, -1, dtype=np.int64)
    for g in _clusters(lo, hi):
        if len(g) == 1 and hi[g[0]] - lo[g[0]] == 1:
            i = g[0]
            partner[i] = lo[i]
            claimed[lo[i]] = True
            continue
        g = np.array(sorted(g))
        j0 = int(lo[g].min())
        j1 = int(hi[g].max())
        refs = np.arange(j0, j1)
        allowed = (refs[None, :] >= lo[g][:, None]) & (refs[None, :] < hi[g][:, None])
        dist = np.abs(r[refs][None, :] - t[g][:, None]).astype(float)
        # every allowed pair outweighs any distance saving, so cardinality comes first;
        # the small index term makes the earlier reference win exact distance ties
        big = 1.0 + 2.0 * float(dist.max()) * len(g) + len(refs)
        rank = (refs - j0)[None, :] / (len(refs) * len(g) + 1.0)
        cost = np.where(allowed, dist + rank - big, 0.0)
        rows, cols = linear_sum_assignment(cost)
        for a, b in zip(rows, cols):
            if allowed[a, b]:
                partner[g[a]] = refs[b]
                claimed[refs[b]] = True
    return partner, claimed


def _per_window_counts(t, r, partner, claimed, windows):
    n = len(windows)
    wd = window_index(t, windows)
    wr = window_index(r, windows)
    total_det = np.bincount(wd, minlength=n)
    total_ref = np.bincount(wr, minlength=n)
    extra = np.bincount(wd[partner < 0], minlength=n)
    missing = np.bincount(wr[~claimed], minlength=n)
    # a correct pair is booked to the window of its reference beat
    correct = np.bincount(wr[partner[partner >= 0]], minlength=n)
    return tuple(
        DetectionCounts(int(total_ref[k]), int(total_det[k]), int(correct[k]), int(extra[k]), int(missing[k]))
        for k in range(n)
    )


def summarize(result):
    """Percentages: correct and missing over reference beats, extra over device beats."""
    c = result.counts if isinstance(result, MatchResult) else result
    if c.total_ref == 0 or c.total_det == 0:
        raise EmptySeriesError("no beats to summarize")
    return DetectionSummary(
        correct_pct=100.0 * c.correct / c.total_ref,
        extra_pct=100.0 * c.extra / c.total_det,
        missing_pct=100.0 * c.missing / c.total_ref,
        counts=c,
    )


def mark_clean_windows(result, windows):
    """Flag as clean exactly the windows with no extra and no missing beat."""
    counts = result.per_window_counts
    if len(counts) != len(windows):
        raise ValueError("match() was not run with these windows")
    return set_clean(windows, [c.extra == 0 and c.missing == 0 for c in counts])


def audit_rows(result, det, ref):
    """One row per beat for the CSV audit file, ordered by time."""
    dp = result.det_partner(len(det)).tolist()
    rp = result.ref_partner(len(ref)).tolist()
    rows = [
        ("det", i, ts, CORRECT if p >= 0 else EXTRA, p)
        for i, (ts, p) in enumerate(zip(det.timestamps_ms.tolist(), dp))
    ]
    rts = ref.timestamps_ms
    rows += [("ref", j, int(rts[j]), MISSING, rp[j]) for j in result.missing_ref_indices.tolist()]
    rows.sort(key=lambda row: (row[2], row[0]))
    return rows
