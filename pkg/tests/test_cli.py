import csv
import shutil
from pathlib import Path

import pytest

from adahi.harness.cli import main

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    cfg = out / "run.toml"
    cfg.write_text("[quantizer]\nK = 16\n[run]\nepisodes = 4\n")
    assert main(["--config", str(cfg), "--out", str(out), "calibrate", "--samples", "2000"]) == 0
    return out, cfg


def test_calibrate_writes_artifacts(calibrated):
    out, _ = calibrated
    for name in ("codebooks.bin", "corpus.csv", "calibration.txt"):
        assert (out / name).exists()
    assert "delta_th = " in (out / "calibration.txt").read_text()


def test_run_and_report(calibrated, capsys):
    out, cfg = calibrated
    assert main(["--config", str(cfg), "--out", str(out), "run", "--mode", "adahi"]) == 0
    assert main(["--config", str(cfg), "--out", str(out), "run", "--mode", "random"]) == 0
    assert main(["--config", str(cfg), "--out", str(out), "run", "--mode", "draft_only"]) == 0
    capsys.readouterr()
    assert main(["--out", str(out), "report"]) == 0
    table = capsys.readouterr().out
    with open(out / "report.csv", newline="") as fh:
        modes = [r["mode"] for r in csv.DictReader(fh)]
    assert modes == ["draft_only", "adahi", "random"]
    assert all(m in table for m in modes)
    assert (out / "cdf.csv").read_text().startswith("mode,throughput,cdf")


def test_rerun_replaces_mode_logs(calibrated):
    out, cfg = calibrated
    for _ in range(2):
        assert main(["--config", str(cfg), "--out", str(out), "run", "--mode", "hybrid", "--episodes", "2"]) == 0
    with open(out / "episodes.csv", newline="") as fh:
        assert sum(r["mode"] == "hybrid" for r in csv.DictReader(fh)) == 2


def test_sweep_one_row_per_rate(calibrated, capsys):
    out, cfg = calibrated
    rc = main(["--config", str(cfg), "--out", str(out), "sweep", "--tr", "1.0,0.8,0.6,0.4", "--episodes", "2"])
    assert rc == 0
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["target_tr"]) for r in rows] == [1.0, 0.8, 0.6, 0.4]
    assert float(rows[0]["delta_th"]) == 0.0
    trs = [float(r["tr"]) for r in rows]
    assert trs == sorted(trs, reverse=True)


def test_adahi_without_artifact_names_calibrate(tmp_path, capsys):
    rc = main(["--out", str(tmp_path), "run", "--mode", "adahi", "--episodes", "1"])
    assert rc != 0
    assert "adahi calibrate" in capsys.readouterr().err


def test_report_on_golden_logs(tmp_path, capsys):
    shutil.copytree(GOLDEN / "run", tmp_path / "run")
    assert main(["--out", str(tmp_path), "report", "--run-dir", str(tmp_path / "run")]) == 0
    assert capsys.readouterr().out == (GOLDEN / "report_table.txt").read_text()
    assert (tmp_path / "report.csv").read_bytes() == (GOLDEN / "report.csv").read_bytes()


def test_report_missing_logs(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "report"]) == 2
    assert "missing run log" in capsys.readouterr().err


def test_bad_flags_exit_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["run", "--mode", "warp"])
    assert info.value.code != 0
    with pytest.raises(SystemExit):
        main(["sweep", "--tr", "1.5"])


def test_bad_config_exit_nonzero(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[gate]\nbeta = 2\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "run", "--mode", "draft_only"]) == 2
    assert "unknown key" in capsys.readouterr().err
