"""CSV beat files, ground-truth sidecars and plot-data exports.

Beat file layout::

    # subject_id: S01
    # source: Reference
    # rhythm_label: SR
    timestamp_ms,interval_ms
    1000,
    1812,812

``interval_ms`` is optional. When present, every row after the first must
equal the difference of consecutive timestamps. All writers go through a
temporary file and ``os.replace`` so readers never see partial output.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import Rhythm, Source, validate_series
from .exceptions import ConsistencyError, NonMonotonicError, ParseError, TooShortError

META_KEYS = ("subject_id", "source", "rhythm_label")
TS_COL = "timestamp_ms"
IV_COL = "interval_ms"


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write_text(path, _csv_text(header, rows))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj):
    """Stable JSON: sorted keys, shortest round-trip floats, NaN written as null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps_json(obj))


def _parse_meta(text, meta, path, lineno):
    body = text.lstrip("#").strip()
    if ":" not in body:
        return
    key, _, value = body.partition(":")
    key = key.strip()
    if key in META_KEYS:
        meta[key] = value.strip()


def _int_cell(cell, what, lineno, path):
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"{what} {cell!r} is not an integer", line=lineno, path=path) from None


def load_beat_file(path, *, strict=False, source=None):
    """Read a beat CSV into a :class:`BeatSeries`.

    Malformed rows raise :class:`ParseError`, an ``interval_ms`` that
    disagrees with the timestamps raises :class:`ConsistencyError`; both
    carry the 1-based line number.
    """
    path = Path(path)
    meta = {}
    header = None
    texts, linenos = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            if text.startswith("#"):
                _parse_meta(text, meta, path, lineno)
                continue
            if header is None:
                cells = [c.strip() for c in next(csv.reader([text]))]
                if cells not in ([TS_COL], [TS_COL, IV_COL]):
                    raise ParseError(
                        f"expected header '{TS_COL}' or '{TS_COL},{IV_COL}', got {text!r}",
                        line=lineno,
                        path=path,
                    )
                header = cells
                continue
            texts.append(text)
            linenos.append(lineno)
    if header is None:
        raise ParseError(f"missing '{TS_COL}' header", path=path)

    rows = list(csv.reader(texts))
    ncol = len(header)
    for row, lineno in zip(rows, linenos):
        if len(row) != ncol:
            raise ParseError(f"expected {ncol} column(s), got {len(row)}", line=lineno, path=path)
    try:
        ts = np.array([row[0] for row in rows], dtype=np.int64)
    except ValueError:
        # slow path only to name the offending line
        for row, lineno in zip(rows, linenos):
            _int_cell(row[0].strip(), "timestamp", lineno, path)
        raise
    d = np.diff(ts)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        k = int(bad[0]) + 1
        raise NonMonotonicError(f"{path}:{linenos[k]}: timestamp {ts[k]} not after previous {ts[k - 1]}")
    if ncol == 2 and rows:
        if rows[0][1].strip():
            raise ParseError("first row must leave interval_ms empty", line=linenos[0], path=path)
        try:
            iv = np.array([row[1] for row in rows[1:]], dtype=np.int64)
        except ValueError:
            for row, lineno in zip(rows[1:], linenos[1:]):
                _int_cell(row[1].strip(), "interval", lineno, path)
            raise
        bad = np.flatnonzero(iv != d)
        if bad.size:
            k = int(bad[0]) + 1
            raise ConsistencyError(
                f"interval_ms {iv[k - 1]} != timestamp difference {d[k - 1]}",
                line=linenos[k],
                path=path,
            )
    if ts.size < 2:
        raise TooShortError(f"{path}: need at least 2 beats, got {ts.size}")
    src = source if source is not None else meta.get("source", Source.REFERENCE.value)
    try:
        src = Source(src)
        rhythm = meta.get("rhythm_label") or None
        rhythm = None if rhythm is None else Rhythm(rhythm)
    except ValueError as exc:
        raise ParseError(f"bad metadata: {exc}", path=path) from None
    return validate_series(
        ts,
        src,
        subject_id=meta.get("subject_id", ""),
        rhythm_label=rhythm,
        strict=strict,
    )


def beat_file_text(series, with_intervals=True):
    head = [
        f"# subject_id: {series.subject_id}",
        f"# source: {series.source.value}",
        f"# rhythm_label: {series.rhythm_label.value if series.rhythm_label else ''}",
    ]
    ts = series.timestamps_ms.tolist()
    if with_intervals:
        rows = [(ts[0], "")] + [(b, b - a) for a, b in zip(ts[:-1], ts[1:])]
        body = _csv_text([TS_COL, IV_COL], rows)
    else:
        body = _csv_text([TS_COL], [(t,) for t in ts])
    return "\n".join(head) + "\n" + body


def write_beat_file(series, path, with_intervals=True):
    atomic_write_text(path, beat_file_text(series, with_intervals))


def write_ground_truth(gt, path):
    """Sidecar with one row per device beat plus one per deleted reference beat.

    Deleted beats do not exist on the device, so their ``beat_index`` refers
    to the reference series.
    """
    rows = [(int(k), str(lab)) for k, lab in enumerate(gt.labels)]
    write_csv(path, ["beat_index", "label"], rows + [(int(j), "deleted") for j in gt.deleted_ref_indices])


def load_ground_truth(path):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["beat_index", "label"]:
            raise ParseError("expected header 'beat_index,label'", line=1, path=path)
        return [(int(i), lab) for i, lab in r]


def write_audit(rows, path):
    write_csv(path, ["stream", "index", "timestamp_ms", "classification", "partner_index"], rows)


def write_bland_altman(ba, path):
    write_csv(path, ["mean_ms", "diff_ms"], zip(ba.mean_ms.tolist(), ba.diff_ms.tolist()))


def write_std20(result, path):
    write_csv(
        path,
        ["start_index", "std20_ms", "label"],
        [(w.start_index, w.std20_ms, w.label) for w in result.window_scores],
    )
