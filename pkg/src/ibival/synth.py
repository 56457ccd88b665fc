"""Seeded generators for sinus-rhythm and AF beat series.

Randomness comes from numpy's PCG64 bit generator. ``generate`` and
``corrupt`` each draw from their own stream, derived from ``(seed, 0)`` and
``(seed, 1)`` respectively, so regenerating a reference never shifts the
artifacts injected into its device copy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .core import MAX_INTERVAL_MS, MIN_INTERVAL_MS, Rhythm, Source, validate_series
from .exceptions import InvalidConfigError

GENUINE = "genuine"
INSERTED = "inserted"
DELETED = "deleted"

_SR_MEAN_RR = 1000.0
_AF_MEAN_RR = 900.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_ms: int = 600_000
    rhythm: Rhythm = Rhythm.SR
    # None picks the rhythm default (1000 ms SR, 900 ms AF)
    mean_rr_ms: float | None = None
    start_ms: int = 0
    subject_id: str = ""
    # sinus rhythm
    rsa_amplitude_ms: float = 20.0
    rsa_period_ms: float = 4000.0
    jitter_std_ms: float = 15.0
    # atrial fibrillation
    rr_std_ms: float = 180.0
    rr_min_ms: float = 300.0
    rr_max_ms: float = 2000.0
    # device artifacts
    extra_beat_rate: float = 0.0
    missed_beat_rate: float = 0.0
    timestamp_noise_std_ms: float = 0.0
    # device clock relative to the reference: t_dev = slope * t_ref + offset
    slope: float = 1.0
    offset_ms: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rhythm", Rhythm(self.rhythm))
        if self.rhythm is Rhythm.UNKNOWN:
            raise InvalidConfigError("rhythm must be SR or AF")
        if self.rr_min_ms < MIN_INTERVAL_MS or self.rr_max_ms > MAX_INTERVAL_MS:
            raise InvalidConfigError(
                f"rr bounds must lie within [{MIN_INTERVAL_MS}, {MAX_INTERVAL_MS}] ms"
            )
        if self.rr_min_ms >= self.rr_max_ms:
            raise InvalidConfigError("rr_min_ms must be below rr_max_ms")
        for name in ("extra_beat_rate", "missed_beat_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("rsa_amplitude_ms", "jitter_std_ms", "rr_std_ms", "timestamp_noise_std_ms"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be non-negative")
        if self.duration_ms <= 0 or self.rsa_period_ms <= 0:
            raise InvalidConfigError("duration_ms and rsa_period_ms must be positive")
        if not self.slope > 0:
            raise InvalidConfigError("slope must be positive")
        if self.mean_rr_ms is not None and not (
            self.rr_min_ms <= self.mean_rr_ms <= self.rr_max_ms
        ):
            raise InvalidConfigError("mean_rr_ms outside [rr_min_ms, rr_max_ms]")

    @property
    def effective_mean_rr_ms(self):
        if self.mean_rr_ms is not None:
            return float(self.mean_rr_ms)
        return _AF_MEAN_RR if self.rhythm is Rhythm.AF else _SR_MEAN_RR

    def to_dict(self):
        d = asdict(self)
        d["rhythm"] = self.rhythm.value
        return d


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-beat provenance of a corrupted device series.

    ``labels[k]`` is ``"genuine"`` or ``"inserted"`` for device beat ``k``;
    ``ref_index[k]`` is the reference beat it came from (-1 if inserted).
    """

    labels: np.ndarray
    ref_index: np.ndarray
    deleted_ref_indices: np.ndarray

    @property
    def n_inserted(self):
        return int(np.count_nonzero(self.labels == INSERTED))

    @property
    def n_genuine(self):
        return int(np.count_nonzero(self.labels == GENUINE))

    @property
    def n_deleted(self):
        return int(self.deleted_ref_indices.size)


def _rng(seed, stream):
    return np.random.Generator(np.random.PCG64([int(seed), stream]))


def generate(config):
    """Draw a reference beat series; returns ``(series, metadata)``."""
    rng = _rng(config.seed, 0)
    mean = config.effective_mean_rr_ms
    lo, hi = config.rr_min_ms, config.rr_max_ms
    # over-provision the draw count so a single vectorized pass covers duration
    n_max = int(math.ceil(config.duration_ms / lo)) + 2
    if config.rhythm is Rhythm.AF:
        rr = np.clip(rng.normal(mean, config.rr_std_ms, n_max), lo, hi)
        t = np.concatenate([[0.0], np.cumsum(rr)])
    else:
        noise = rng.normal(0.0, config.jitter_std_ms, n_max) if config.jitter_std_ms else np.zeros(n_max)
        t = np.empty(n_max + 1)
        t[0] = 0.0
        w = 2.0 * math.pi / config.rsa_period_ms
        amp = config.rsa_amplitude_ms
        for k in range(n_max):
            rr = mean + amp * math.sin(w * t[k]) + noise[k]
            t[k + 1] = t[k] + min(max(rr, lo), hi)
            if t[k + 1] > config.duration_ms:
                t = t[: k + 2]
                break
    t = t[t <= config.duration_ms]
    ts = np.rint(t).astype(np.int64) + int(config.start_ms)
    series = validate_series(
        ts, Source.REFERENCE, subject_id=config.subject_id, rhythm_label=config.rhythm
    )
    meta = {"config": config.to_dict(), "n_beats": len(series)}
    return series, meta


def corrupt(ref, config):
    """Derive a device series from ``ref``: noise, deletions, insertions, clock.

    Returns ``(det, ground_truth)``.
    """
    rng = _rng(config.seed, 1)
    t = ref.timestamps_ms.astype(float)
    n = t.size
    src = np.arange(n)

    if config.timestamp_noise_std_ms > 0:
        t = t + rng.normal(0.0, config.timestamp_noise_std_ms, n)
        order = np.argsort(t, kind="stable")
        t, src = t[order], src[order]

    keep = np.ones(n, dtype=bool)
    if config.missed_beat_rate > 0:
        keep = rng.random(n) >= config.missed_beat_rate
        keep[0] = keep[-1] = True
    t, src = t[keep], src[keep]
    deleted = np.setdiff1d(np.arange(n), src)

    if config.extra_beat_rate > 0:
        m = t.size - 1
        hit = np.flatnonzero(rng.random(m) < config.extra_beat_rate)
        frac = rng.random(hit.size)
        t_new = t[hit] + frac * (t[hit + 1] - t[hit])
        t = np.concatenate([t, t_new])
        src = np.concatenate([src, np.full(hit.size, -1)])
        order = np.argsort(t, kind="stable")
        t, src = t[order], src[order]

    t = config.slope * t + config.offset_ms
    ts = np.rint(t).astype(np.int64)
    # rounding may collapse an insertion onto its neighbour; nudge forward by 1 ms
    for k in range(1, ts.size):
        if ts[k] <= ts[k - 1]:
            ts[k] = ts[k - 1] + 1

    labels = np.where(src >= 0, GENUINE, INSERTED)
    det = validate_series(
        ts, Source.DEVICE, subject_id=ref.subject_id, rhythm_label=ref.rhythm_label
    )
    gt = GroundTruth(labels=labels, ref_index=src, deleted_ref_indices=deleted)
    return det, gt


def make_pair(config):
    """Convenience: ``generate`` then ``corrupt`` with the same config."""
    ref, _ = generate(config)
    det, gt = corrupt(ref, config)
    return ref, det, gt
