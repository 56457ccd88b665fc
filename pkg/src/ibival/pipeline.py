"""End-to-end evaluation of device/reference recording pairs.

The per-recording path is: sync, apply the clock map, match against the
reference minute windows, keep clean windows, drop ectopic reference
intervals, then score errors, HRV and the AF screen. Groups of recordings
are aggregated both by pooling every pair and by averaging per recording.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import afscreen, beatmatch, metrics
from .core import WINDOW_LEN_MS, windows as make_windows
from .exceptions import EmptyPairSetError, TooShortError
from .sync import SearchConfig, apply, synchronize


@dataclass(frozen=True)
class PipelineConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    af: afscreen.AfConfig = field(default_factory=afscreen.AfConfig)
    window_len_ms: int = WINDOW_LEN_MS
    ectopic_threshold: float = metrics.ECTOPIC_THRESHOLD
    ectopic_window: int = metrics.ECTOPIC_MEDIAN_WINDOW
    require_compensatory: bool = True
    strategy: str = "optimal"
    sync: bool = True

    def to_dict(self):
        return {
            "search": dict(self.search.__dict__),
            "af": self.af.to_dict(),
            "window_len_ms": self.window_len_ms,
            "ectopic_threshold": self.ectopic_threshold,
            "ectopic_window": self.ectopic_window,
            "require_compensatory": self.require_compensatory,
            "strategy": self.strategy,
            "sync": self.sync,
        }


@dataclass(frozen=True, eq=False)
class RecordingResult:
    name: str
    subject_id: str
    group: str
    clock_map: object
    sync_report: object
    match: beatmatch.MatchResult
    detection: beatmatch.DetectionSummary
    windows: list
    ectopic: metrics.EctopicExclusion
    pairs: metrics.PairSet
    error_stats: metrics.ErrorStats | None
    bland_altman: metrics.BlandAltmanData | None
    hrv_ibi: metrics.HrvStats | None
    hrv_rri: metrics.HrvStats | None
    af: afscreen.AfScreenResult
    aligned: object
    # interval arrays on the reference interval index, used for pooled HRV
    ibi_full: np.ndarray = field(repr=False, default=None)
    rri_full: np.ndarray = field(repr=False, default=None)
    usable: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        n_clean = sum(w.clean for w in self.windows)
        return {
            "name": self.name,
            "subject_id": self.subject_id,
            "group": self.group,
            "clock_map": self.clock_map.to_dict() if self.clock_map else None,
            "sync": self.sync_report.to_dict() if self.sync_report else None,
            "detection": self.detection.to_dict(),
            "windows": {"n_windows": len(self.windows), "n_clean": int(n_clean)},
            "ectopic": self.ectopic.to_dict(),
            "pairs": self.pairs.provenance(),
            "error_stats": _d(self.error_stats),
            "bland_altman": _d(self.bland_altman),
            "hrv_ibi": _d(self.hrv_ibi),
            "hrv_rri": _d(self.hrv_rri),
            "afscreen": self.af.to_dict(),
        }


def _d(x):
    return None if x is None else x.to_dict()


def _maybe(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (EmptyPairSetError, TooShortError):
        return None


def evaluate(det, ref, config=None, name="", group=""):
    """Run the full pipeline on one device/reference pair."""
    config = config or PipelineConfig()
    wins = make_windows(ref, config.window_len_ms)
    if config.sync:
        cmap, srep = synchronize(det, ref, config.search, wins)
        aligned = apply(cmap, det)
        slope = cmap.slope
    else:
        cmap = srep = None
        aligned = det
        slope = 1.0
    with warnings.catch_warnings():
        # the sync report already says how well the series line up
        warnings.simplefilter("ignore", beatmatch.UnalignedWarning)
        res = beatmatch.match(aligned, ref, wins, strategy=config.strategy)
    wins = beatmatch.mark_clean_windows(res, wins)
    ect = metrics.exclude_ectopic(
        ref, config.ectopic_threshold, config.ectopic_window, config.require_compensatory
    )
    pairs = metrics.build_pairs(det, ref, res, wins, ect, slope=slope)

    rri_full = np.diff(ref.timestamps_ms).astype(float)
    ibi_full = rri_full.copy()
    usable = np.zeros(rri_full.size, dtype=bool)
    ibi_full[pairs.ref_interval_index] = pairs.ibi_ms
    usable[pairs.ref_interval_index] = True

    af_res = _maybe(afscreen.screen, ibi_full, config.af, usable)
    if af_res is None:
        af_res = afscreen.classify([], config.af)
    return RecordingResult(
        name=name,
        subject_id=ref.subject_id or det.subject_id,
        group=group,
        clock_map=cmap,
        sync_report=srep,
        match=res,
        detection=beatmatch.summarize(res),
        windows=wins,
        ectopic=ect,
        pairs=pairs,
        error_stats=_maybe(metrics.error_stats, pairs),
        bland_altman=_maybe(metrics.bland_altman, pairs),
        hrv_ibi=_maybe(metrics.hrv_stats, ibi_full, ~usable),
        hrv_rri=_maybe(metrics.hrv_stats, rri_full, ~usable),
        af=af_res,
        aligned=aligned,
        ibi_full=ibi_full,
        rri_full=rri_full,
        usable=usable,
    )


def _pooled_hrv(results, attr):
    xs, ms = [], []
    for r in results:
        xs += [getattr(r, attr), [1.0]]
        # the spacer is unusable, so no difference spans two recordings
        ms += [r.usable, [False]]
    if not xs:
        return None
    return _maybe(metrics.hrv_stats, np.concatenate(xs), ~np.concatenate(ms))


def aggregate(results):
    """Group-level numbers: pooled over all beats/pairs and mean over recordings."""
    counts = beatmatch.DetectionCounts()
    for r in results:
        counts = counts + r.match.counts
    out = {
        "n_recordings": len(results),
        "detection_pooled": beatmatch.summarize(counts).to_dict() if results else None,
        "detection_mean": metrics.mean_of([r.detection for r in results]),
        "error_stats_pooled": _d(_maybe(metrics.pooled_error_stats, [r.pairs for r in results])),
        "error_stats_mean": metrics.mean_of([r.error_stats for r in results if r.error_stats]),
        "hrv_ibi_pooled": _d(_pooled_hrv(results, "ibi_full")),
        "hrv_rri_pooled": _d(_pooled_hrv(results, "rri_full")),
        "hrv_ibi_mean": metrics.mean_of([r.hrv_ibi for r in results if r.hrv_ibi]),
        "hrv_rri_mean": metrics.mean_of([r.hrv_rri for r in results if r.hrv_rri]),
        "af_labels": {lab: sum(r.af.overall_label == lab for r in results) for lab in ("SR", "AF", "Mixed", "Unknown")},
    }
    # the detection record's counts are nested; keep only percentages in the mean
    out["detection_mean"] = {k: v for k, v in out["detection_mean"].items() if k.endswith("_pct")}
    return out


def _job(args):
    det, ref, config, name, group = args
    return evaluate(det, ref, config, name, group)


def evaluate_many(jobs, config=None, n_jobs=1):
    """Evaluate ``(det, ref, name, group)`` tuples; results keep input order."""
    config = config or PipelineConfig()
    args = [(d, r, config, n, g) for d, r, n, g in jobs]
    if n_jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(_job, args))
    return [_job(a) for a in args]


def build_report(results, config=None):
    config = config or PipelineConfig()
    groups = {}
    for r in results:
        groups.setdefault(r.group or "all", []).append(r)
    return {
        "config": config.to_dict(),
        "recordings": [r.to_dict() for r in results],
        "groups": {g: aggregate(rs) for g, rs in sorted(groups.items())},
    }


def _f(v):
    return "-" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.2f}"


def _table(title, header, rows):
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    out = [title, line(header), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out)


def render_text(report):
    """Human-readable Tables I-III (two decimals) for every group and recording."""
    rows1, rows2, rows3 = [], [], []
    for g, agg in report["groups"].items():
        det = agg["detection_pooled"] or {}
        rows1.append([f"{g} (pooled)", _f(det.get("correct_pct")), _f(det.get("extra_pct")), _f(det.get("missing_pct"))])
        dm = agg["detection_mean"]
        rows1.append([f"{g} (mean)", _f(dm.get("correct_pct")), _f(dm.get("extra_pct")), _f(dm.get("missing_pct"))])
        for tag, es in (("pooled", agg["error_stats_pooled"] or {}), ("mean", agg["error_stats_mean"])):
            rows2.append([f"{g} ({tag})", _f(es.get("me_ms")), _f(es.get("mae_ms")), _f(es.get("mape_pct")), _f(es.get("rmse_ms"))])
        for tag in ("pooled", "mean"):
            hi = agg[f"hrv_ibi_{tag}"] or {}
            hr = agg[f"hrv_rri_{tag}"] or {}
            rows3.append([
                f"{g} ({tag})",
                _f(hi.get("rmssd_ms")), _f(hr.get("rmssd_ms")),
                _f(hi.get("pnn50_pct")), _f(hr.get("pnn50_pct")),
                _f(hi.get("std_ms")), _f(hr.get("std_ms")),
            ])
    for rec in report["recordings"]:
        name = rec["name"] or rec["subject_id"] or "recording"
        d = rec["detection"]
        rows1.append([name, _f(d["correct_pct"]), _f(d["extra_pct"]), _f(d["missing_pct"])])
        es = rec["error_stats"] or {}
        rows2.append([name, _f(es.get("me_ms")), _f(es.get("mae_ms")), _f(es.get("mape_pct")), _f(es.get("rmse_ms"))])
        hi, hr = rec["hrv_ibi"] or {}, rec["hrv_rri"] or {}
        rows3.append([
            name,
            _f(hi.get("rmssd_ms")), _f(hr.get("rmssd_ms")),
            _f(hi.get("pnn50_pct")), _f(hr.get("pnn50_pct")),
            _f(hi.get("std_ms")), _f(hr.get("std_ms")),
        ])
    parts = [
        _table("Table I. IBI detection performance", ["", "Correct [%]", "Extra [%]", "Missing [%]"], rows1),
        _table("Table II. IBI estimation performance", ["", "ME [ms]", "MAE [ms]", "MAPE [%]", "RMSE [ms]"], rows2),
        _table(
            "Table III. HRV statistics (device IBI / reference RRI)",
            ["", "RMSSD IBI", "RMSSD RRI", "pNN50 IBI", "pNN50 RRI", "STD IBI", "STD RRI"],
            rows3,
        ),
    ]
    afl = ["AF screen"]
    for rec in report["recordings"]:
        a = rec["afscreen"]
        afl.append(f"{rec['name'] or rec['subject_id'] or 'recording'}: {a['overall_label']} (AF windows {_f(100 * a['fraction_af'] if a['n_windows'] else None)}%)")
    parts.append("\n".join(afl))
    return "\n\n".join(parts) + "\n"
