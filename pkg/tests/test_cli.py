import json
import subprocess
import sys

import numpy as np
import pytest

from ibival import io, metrics
from ibival.beatmatch import mark_clean_windows, match
from ibival.cli import main
from ibival.core import windows
from ibival.sync import apply, synchronize
from ibival.synth import SynthConfig, make_pair


@pytest.fixture
def pair_files(tmp_path):
    def make(name="p", **kw):
        ref, det, gt = make_pair(SynthConfig(**kw))
        d = tmp_path / name
        io.write_beat_file(ref, d / "ref.csv")
        io.write_beat_file(det, d / "det.csv")
        return d / "det.csv", d / "ref.csv"

    return make


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_synth_deterministic(tmp_path):
    args = ["synth", "--rhythm", "af", "--seed", "7", "--duration-ms", "600000"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert set(a) == {"ref.csv", "det.csv", "ground_truth.csv", "synth.json"}


def test_report_clean_is_100(tmp_path, pair_files, capsys):
    det, ref = pair_files(seed=1)
    assert main(["report", "--det", str(det), "--ref", str(ref), "--out", str(tmp_path / "r")]) == 0
    text = (tmp_path / "r" / "report.txt").read_text()
    assert text == capsys.readouterr().out
    row = [ln for ln in text.splitlines() if ln.startswith("det ")][0]
    assert row.split()[1:4] == ["100.00", "0.00", "0.00"]
    for name in ("report.json", "bland_altman.csv", "std20.csv", "audit.csv"):
        assert (tmp_path / "r" / name).exists()
    assert (tmp_path / "r" / "bland_altman.csv").read_text().startswith("mean_ms,diff_ms\n")
    assert (tmp_path / "r" / "std20.csv").read_text().startswith("start_index,std20_ms,label\n")


def test_report_deterministic(tmp_path, pair_files):
    det, ref = pair_files(seed=4, extra_beat_rate=0.003, offset_ms=320, slope=1 + 50e-6)
    for out in ("a", "b"):
        assert main(["report", "--det", str(det), "--ref", str(ref), "--out", str(tmp_path / out)]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_report_matches_direct_module_calls(tmp_path, pair_files):
    det_p, ref_p = pair_files(
        seed=5, extra_beat_rate=0.003, missed_beat_rate=0.002, timestamp_noise_std_ms=4, offset_ms=-320, slope=1 - 50e-6
    )
    assert main(["report", "--det", str(det_p), "--ref", str(ref_p), "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    rec = rep["recordings"][0]

    det, ref = io.load_beat_file(det_p), io.load_beat_file(ref_p)
    wins = windows(ref)
    cmap, _ = synchronize(det, ref, windows_=wins)
    res = match(apply(cmap, det), ref, wins)
    wins = mark_clean_windows(res, wins)
    ps = metrics.build_pairs(det, ref, res, wins, metrics.exclude_ectopic(ref), slope=cmap.slope)
    es = metrics.error_stats(ps)
    assert rec["error_stats"]["mae_ms"] == es.mae_ms
    assert rec["error_stats"]["n_pairs"] == es.n_pairs
    assert rec["detection"]["n_correct"] == res.counts.correct
    text = (tmp_path / "r" / "report.txt").read_text()
    assert f"{es.mae_ms:.2f}" in text


def test_batch_groups_and_jobs(tmp_path, pair_files):
    files = [pair_files(f"r{k}", seed=k, rhythm=r) for k, r in enumerate(["SR", "AF", "SR"])]
    args = ["report", "--out", str(tmp_path / "seq")]
    for d, r in files:
        args += ["--det", str(d), "--ref", str(r)]
    assert main(args) == 0
    par = [a if a != str(tmp_path / "seq") else str(tmp_path / "par") for a in args] + ["--jobs", "2"]
    assert main(par) == 0
    assert _files(tmp_path / "seq") == _files(tmp_path / "par")
    rep = json.loads((tmp_path / "seq" / "report.json").read_text())
    assert set(rep["groups"]) == {"SR", "AF"}
    assert rep["groups"]["SR"]["n_recordings"] == 2
    assert rep["groups"]["AF"]["af_labels"]["AF"] == 1
    assert (tmp_path / "seq" / "001_det" / "std20.csv").exists()


def test_subcommands(tmp_path, pair_files, capsys):
    det, ref = pair_files(seed=2, offset_ms=320)
    assert main(["sync", "--det", str(det), "--ref", str(ref), "--out", str(tmp_path / "al.csv")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["clock_map"]["offset_ms"] + 320) <= 1
    al = tmp_path / "al.csv"
    assert main(["match", "--det", str(al), "--ref", str(ref), "--audit", str(tmp_path / "audit.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["correct_pct"] == 100.0
    assert main(["metrics", "--det", str(det), "--ref", str(ref), "--bland-altman", str(tmp_path / "ba.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["error_stats"]["mae_ms"] <= 1.0
    assert main(["hrv", "--beats", str(ref)]) == 0
    assert json.loads(capsys.readouterr().out)["hrv"]["n_intervals"] > 500
    assert main(["afscreen", "--beats", str(ref), "--std20", str(tmp_path / "s.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["recordings"][0]["overall_label"] == "SR"


def test_metrics_from_pairs_file(tmp_path, capsys):
    p = tmp_path / "pairs.csv"
    p.write_text("rri_ms,ibi_ms\n1000,1007\n990,983\n1010,1010\n")
    assert main(["metrics", "--pairs", str(p)]) == 0
    es = json.loads(capsys.readouterr().out)["error_stats"]
    assert round(es["mae_ms"], 3) == 4.667


def test_afscreen_calibrate(tmp_path, capsys):
    files = []
    for k, r in enumerate(["sr", "af"]):
        main(["synth", "--rhythm", r, "--seed", str(k), "--out", str(tmp_path / r)])
        files.append(str(tmp_path / r / "ref.csv"))
    capsys.readouterr()
    assert main(["afscreen", "--calibrate", "--beats", *files]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 51.70 < out["config"]["std_threshold_ms"] < 211.48


def test_config_file_and_flag_precedence(tmp_path, pair_files, capsys):
    det, ref = pair_files(seed=3)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"offset_range_ms": 1000, "slope_range_ppm": 100}))
    assert main(["sync", "--det", str(det), "--ref", str(ref), "--config", str(cfg)]) == 0
    rep = json.loads(capsys.readouterr().out)["sync"]
    assert rep["coarse_grid_shape"] == [21, 21]
    assert main(["sync", "--det", str(det), "--ref", str(ref), "--config", str(cfg), "--offset-range-ms", "2000"]) == 0
    rep = json.loads(capsys.readouterr().out)["sync"]
    assert rep["coarse_grid_shape"] == [21, 41]


def test_exit_codes(tmp_path, pair_files, capsys):
    det, ref = pair_files(seed=3)
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp_ms,interval_ms\n0,\n1000,999\n")
    assert main(["hrv", "--beats", str(bad)]) == 1
    assert "bad.csv:3" in capsys.readouterr().err
    assert main(["hrv", "--beats", str(tmp_path / "missing.csv")]) == 1
    assert main(["nope"]) == 2
    assert main(["sync", "--det", str(det)]) == 2
    assert "--ref" in capsys.readouterr().err
    assert main(["sync", "--det", str(det), "--ref", str(ref), "--offset-range-ms", "abc"]) == 2
    assert "--offset-range-ms" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text('{"no_such_flag": 1}')
    assert main(["sync", "--det", str(det), "--ref", str(ref), "--config", str(cfg)]) == 2
    assert "no_such_flag" in capsys.readouterr().err
    assert main(["afscreen", "--beats", str(ref), "--af-fraction", "0.05"]) == 2
    assert main(["report", "--det", str(det), "--ref", str(ref), "--ref", str(ref), "--out", str(tmp_path)]) == 2


def test_console_script(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "ibival.cli", "synth", "--seed", "1", "--duration-ms", "60000", "--out", str(tmp_path)],
        capture_output=True,
    )
    assert r.returncode == 0
    assert (tmp_path / "ref.csv").exists()
