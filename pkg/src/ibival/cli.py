"""Command-line entry point: ``ibival <subcommand> ...``.

Exit codes: 0 success, 1 data or validation error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__, afscreen, beatmatch, io, metrics, pipeline, synth
from .core import Rhythm, Source, windows as make_windows
from .exceptions import DegenerateSearchError, IbivalError, InvalidConfigError, ParseError
from .sync import SearchConfig, apply, synchronize

log = logging.getLogger("ibival")


class UsageError(Exception):
    pass


def _add_search(p):
    g = p.add_argument_group("clock search")
    g.add_argument("--offset-range-ms", type=float, default=60_000.0, help="global offset search half-range")
    g.add_argument("--offset-step-ms", type=float, default=100.0)
    g.add_argument("--slope-range-ppm", type=float, default=500.0, help="clock drift search half-range")
    g.add_argument("--slope-step-ppm", type=float, default=10.0)
    g.add_argument("--window-offset-range-ms", type=float, default=250.0, help="per-minute residual offset half-range")
    g.add_argument("--pair-cap-ms", type=float, default=500.0)
    g.add_argument("--min-window-beats", type=int, default=10)
    g.add_argument("--window-len-ms", type=int, default=60_000)


def _add_ectopic(p):
    g = p.add_argument_group("ectopic exclusion")
    g.add_argument("--ectopic-threshold", type=float, default=metrics.ECTOPIC_THRESHOLD)
    g.add_argument("--ectopic-window", type=int, default=metrics.ECTOPIC_MEDIAN_WINDOW)
    g.add_argument(
        "--no-compensatory",
        dest="require_compensatory",
        action="store_false",
        help="exclude every deviating interval, not only premature/compensatory pairs",
    )


def _add_af(p):
    g = p.add_argument_group("AF screen")
    g.add_argument("--std-threshold-ms", type=float, default=100.0)
    g.add_argument("--af-fraction", type=float, default=0.5)
    g.add_argument("--sr-fraction", type=float, default=0.1)
    g.add_argument("--stride", type=int, default=1, help="1 for overlapping windows, 20 for disjoint groups")


def _add_match(p):
    p.add_argument("--strategy", choices=("optimal", "greedy"), default="optimal")


def _add_sync_toggle(p):
    p.add_argument("--no-sync", dest="sync", action="store_false", help="treat the device clock as already aligned")


def build_parser():
    parser = argparse.ArgumentParser(prog="ibival", description="Validate device inter-beat intervals against a reference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", type=Path, help="JSON file with flag defaults (flags given on the command line win)")
        return p

    p = cmd("synth", "generate a synthetic reference and corrupted device series")
    p.add_argument("--rhythm", type=str.upper, choices=("SR", "AF"), default="SR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-ms", type=int, default=600_000)
    p.add_argument("--mean-rr-ms", type=float, default=None)
    p.add_argument("--subject-id", default="")
    p.add_argument("--rsa-amplitude-ms", type=float, default=20.0)
    p.add_argument("--rsa-period-ms", type=float, default=4000.0)
    p.add_argument("--jitter-std-ms", type=float, default=15.0)
    p.add_argument("--rr-std-ms", type=float, default=180.0)
    p.add_argument("--rr-min-ms", type=float, default=300.0)
    p.add_argument("--rr-max-ms", type=float, default=2000.0)
    p.add_argument("--extra-beat-rate", type=float, default=0.0)
    p.add_argument("--missed-beat-rate", type=float, default=0.0)
    p.add_argument("--timestamp-noise-std-ms", type=float, default=0.0)
    p.add_argument("--slope-ppm", type=float, default=0.0, help="device clock drift")
    p.add_argument("--offset-ms", type=float, default=0.0, help="device clock offset")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")

    p = cmd("sync", "estimate the device-to-reference clock map")
    p.add_argument("--det", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write the aligned device beat file here")
    p.add_argument("--json", type=Path, help="write the clock map and sync report here (default: stdout)")
    _add_search(p)

    p = cmd("match", "classify beats as correct, extra or missing")
    p.add_argument("--det", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--sync", dest="sync", action="store_true", help="synchronize before matching")
    p.add_argument("--audit", type=Path, help="per-beat audit CSV")
    _add_match(p)
    _add_search(p)

    p = cmd("metrics", "interval error statistics and Bland-Altman data")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--det", type=Path)
    src.add_argument("--pairs", type=Path, help="CSV with rri_ms,ibi_ms columns")
    p.add_argument("--ref", type=Path)
    p.add_argument("--bland-altman", type=Path, help="write mean_ms,diff_ms points here")
    _add_sync_toggle(p)
    _add_match(p)
    _add_search(p)
    _add_ectopic(p)

    p = cmd("hrv", "RMSSD, pNN50 and STD of one beat file")
    p.add_argument("--beats", type=Path, required=True)
    p.add_argument("--no-ectopic", dest="ectopic", action="store_false", help="keep ectopic intervals")
    _add_ectopic(p)

    p = cmd("afscreen", "rolling 20-interval STD AF screen")
    p.add_argument("--beats", type=Path, nargs="+", required=True)
    p.add_argument("--std20", type=Path, help="write start_index,std20_ms,label (single input only)")
    p.add_argument(
        "--calibrate",
        action="store_true",
        help="choose the threshold from the inputs' rhythm_label metadata before screening",
    )
    _add_af(p)

    p = cmd("report", "full evaluation pipeline with Tables I-III")
    p.add_argument("--det", type=Path, action="append", required=True, help="repeat for batch mode")
    p.add_argument("--ref", type=Path, action="append", required=True, help="one per --det, same order")
    p.add_argument("--group", action="append", help="group label per recording (default: rhythm_label or 'all')")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="recordings evaluated in parallel")
    _add_sync_toggle(p)
    _add_match(p)
    _add_search(p)
    _add_ectopic(p)
    _add_af(p)
    return parser


def _apply_config(parser, argv):
    """Parse, then reparse with ``--config`` values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {args.config} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("--config: top level must be an object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"--config: unknown key {key!r} for '{args.command}'")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _search(a):
    return SearchConfig(
        offset_range_ms=a.offset_range_ms,
        offset_step_ms=a.offset_step_ms,
        slope_range_ppm=a.slope_range_ppm,
        slope_step_ppm=a.slope_step_ppm,
        window_offset_range_ms=a.window_offset_range_ms,
        pair_cap_ms=a.pair_cap_ms,
        min_window_beats=a.min_window_beats,
    )


def _af(a):
    return afscreen.AfConfig(a.std_threshold_ms, a.af_fraction, a.sr_fraction, a.stride)


def _print_json(obj, path=None):
    if path is None:
        sys.stdout.write(io.dumps_json(obj))
    else:
        io.write_json(path, obj)


def cmd_synth(a):
    cfg = synth.SynthConfig(
        seed=a.seed,
        duration_ms=a.duration_ms,
        rhythm=Rhythm(a.rhythm),
        mean_rr_ms=a.mean_rr_ms,
        subject_id=a.subject_id,
        rsa_amplitude_ms=a.rsa_amplitude_ms,
        rsa_period_ms=a.rsa_period_ms,
        jitter_std_ms=a.jitter_std_ms,
        rr_std_ms=a.rr_std_ms,
        rr_min_ms=a.rr_min_ms,
        rr_max_ms=a.rr_max_ms,
        extra_beat_rate=a.extra_beat_rate,
        missed_beat_rate=a.missed_beat_rate,
        timestamp_noise_std_ms=a.timestamp_noise_std_ms,
        slope=1.0 + a.slope_ppm * 1e-6,
        offset_ms=a.offset_ms,
    )
    ref, meta = synth.generate(cfg)
    det, gt = synth.corrupt(ref, cfg)
    out = a.out
    io.write_beat_file(ref, out / "ref.csv")
    io.write_beat_file(det, out / "det.csv")
    io.write_ground_truth(gt, out / "ground_truth.csv")
    meta = dict(meta, n_det_beats=len(det), n_inserted=gt.n_inserted, n_deleted=gt.n_deleted)
    io.write_json(out / "synth.json", meta)
    log.info("wrote %d reference and %d device beats to %s", len(ref), len(det), out)
    return 0


def cmd_sync(a):
    det = io.load_beat_file(a.det, source=Source.DEVICE)
    ref = io.load_beat_file(a.ref)
    cmap, rep = synchronize(det, ref, _search(a), make_windows(ref, a.window_len_ms))
    if a.out:
        io.write_beat_file(apply(cmap, det), a.out)
    _print_json({"clock_map": cmap.to_dict(), "sync": rep.to_dict()}, a.json)
    return 0


def _matched(a, det, ref):
    wins = make_windows(ref, a.window_len_ms)
    aligned, cmap = det, None
    if a.sync:
        cmap, _ = synchronize(det, ref, _search(a), wins)
        aligned = apply(cmap, det)
    res = beatmatch.match(aligned, ref, wins, strategy=a.strategy)
    return res, wins, aligned, cmap


def cmd_match(a):
    det = io.load_beat_file(a.det, source=Source.DEVICE)
    ref = io.load_beat_file(a.ref)
    res, wins, aligned, _ = _matched(a, det, ref)
    if a.audit:
        io.write_audit(beatmatch.audit_rows(res, aligned, ref), a.audit)
    wins = beatmatch.mark_clean_windows(res, wins)
    out = beatmatch.summarize(res).to_dict()
    out["n_windows"] = len(wins)
    out["n_clean_windows"] = sum(w.clean for w in wins)
    _print_json(out)
    return 0


def _load_pairs(path):
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:2]] != ["rri_ms", "ibi_ms"]:
        raise ParseError("expected header 'rri_ms,ibi_ms'", line=1, path=path)
    rri, ibi = [], []
    for k, row in enumerate(rows[1:], start=2):
        try:
            rri.append(float(row[0]))
            ibi.append(float(row[1]))
        except (ValueError, IndexError):
            raise ParseError(f"bad row {row!r}", line=k, path=path) from None
    return metrics.PairSet.from_arrays(rri, ibi)


def cmd_metrics(a):
    if a.pairs:
        pairs = _load_pairs(a.pairs)
    else:
        if a.ref is None:
            raise UsageError("metrics: --ref is required with --det")
        det = io.load_beat_file(a.det, source=Source.DEVICE)
        ref = io.load_beat_file(a.ref)
        res, wins, _, cmap = _matched(a, det, ref)
        wins = beatmatch.mark_clean_windows(res, wins)
        ect = metrics.exclude_ectopic(ref, a.ectopic_threshold, a.ectopic_window, a.require_compensatory)
        pairs = metrics.build_pairs(det, ref, res, wins, ect, slope=cmap.slope if cmap else 1.0)
    out = {"error_stats": metrics.error_stats(pairs).to_dict(), "pairs": pairs.provenance()}
    if len(pairs) >= 2:
        ba = metrics.bland_altman(pairs)
        out["bland_altman"] = ba.to_dict()
        if a.bland_altman:
            io.write_bland_altman(ba, a.bland_altman)
    _print_json(out)
    return 0


def cmd_hrv(a):
    s = io.load_beat_file(a.beats)
    ect = metrics.exclude_ectopic(s, a.ectopic_threshold, a.ectopic_window, a.require_compensatory)
    h = metrics.hrv_stats(s, ect if a.ectopic else None)
    _print_json({"hrv": h.to_dict(), "ectopic": ect.to_dict() if a.ectopic else None})
    return 0


def cmd_afscreen(a):
    series = [io.load_beat_file(p) for p in a.beats]
    cfg = _af(a)
    if a.calibrate:
        runs = []
        for p, s in zip(a.beats, series):
            if s.rhythm_label not in (Rhythm.SR, Rhythm.AF):
                raise UsageError(f"--calibrate: {p} has no SR/AF rhythm_label")
            runs.append((s, s.rhythm_label))
        cfg = afscreen.calibrate_threshold(runs, cfg)
    results = [afscreen.screen(s, cfg) for s in series]
    if a.std20:
        if len(results) != 1:
            raise UsageError("--std20 needs exactly one --beats file")
        io.write_std20(results[0], a.std20)
    _print_json({
        "config": cfg.to_dict(),
        "recordings": [dict(r.to_dict(), file=str(p)) for p, r in zip(a.beats, results)],
    })
    return 0


def cmd_report(a):
    if len(a.det) != len(a.ref):
        raise UsageError("report: give one --ref per --det")
    if a.group and len(a.group) != len(a.det):
        raise UsageError("report: give one --group per --det or none")
    if a.jobs < 1:
        raise UsageError("report: --jobs must be >= 1")
    config = pipeline.PipelineConfig(
        search=_search(a),
        af=_af(a),
        window_len_ms=a.window_len_ms,
        ectopic_threshold=a.ectopic_threshold,
        ectopic_window=a.ectopic_window,
        require_compensatory=a.require_compensatory,
        strategy=a.strategy,
        sync=a.sync,
    )
    jobs = []
    for k, (dp, rp) in enumerate(zip(a.det, a.ref)):
        det = io.load_beat_file(dp, source=Source.DEVICE)
        ref = io.load_beat_file(rp)
        group = a.group[k] if a.group else (ref.rhythm_label.value if ref.rhythm_label else "all")
        name = dp.stem if len(a.det) == 1 else f"{k:03d}_{dp.stem}"
        jobs.append((det, ref, name, group))
    results = pipeline.evaluate_many(jobs, config, a.jobs)
    report = pipeline.build_report(results, config)
    for rec, (dp, rp) in zip(report["recordings"], zip(a.det, a.ref)):
        rec["det_file"], rec["ref_file"] = str(dp), str(rp)

    out = a.out
    batch = len(results) > 1
    for r, (_, ref, _, _) in zip(results, jobs):
        d = out / r.name if batch else out
        if r.bland_altman is not None:
            io.write_bland_altman(r.bland_altman, d / "bland_altman.csv")
        else:
            io.write_csv(d / "bland_altman.csv", ["mean_ms", "diff_ms"], [])
        io.write_std20(r.af, d / "std20.csv")
        io.write_audit(beatmatch.audit_rows(r.match, r.aligned, ref), d / "audit.csv")
    io.write_json(out / "report.json", report)
    text = pipeline.render_text(report)
    io.atomic_write_text(out / "report.txt", text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "sync": cmd_sync,
    "match": cmd_match,
    "metrics": cmd_metrics,
    "hrv": cmd_hrv,
    "afscreen": cmd_afscreen,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ibival: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    warnings.simplefilter("default", category=UserWarning)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidConfigError, DegenerateSearchError) as exc:
        # bad flag values are usage errors even when a module detects them
        print(f"ibival {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except IbivalError as exc:
        print(f"ibival {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ibival {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
