import json
from pathlib import Path

import pytest

from cohslam.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = str(CONFIGS / "tiny.cfg")


def status(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_validate_ok(capsys):
    assert main(["validate", "--config", TINY]) == 0
    s = status(capsys)
    assert s["status"] == "ok" and s["anchors"] == 4 and s["surfaces"] == 2


def test_missing_config_flag_is_usage_error(capsys):
    assert main(["validate"]) == 2


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate", "--config", TINY]) == 2


def test_invalid_config_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    text = (CONFIGS / "tiny.cfg").read_text().replace('"snr_db": 25.0', '"snr_db": "loud"')
    assert text != (CONFIGS / "tiny.cfg").read_text()
    bad.write_text(text)
    assert main(["validate", "--config", str(bad)]) == 1
    s = status(capsys)
    want = next(i for i, ln in enumerate(text.splitlines(), 1) if '"snr_db"' in ln)
    assert s["status"] == "invalid" and s["line"] == want


def test_missing_file(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_simulate_and_run(tmp_path, capsys):
    assert main(["simulate", "--config", TINY, "--out", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "observations.bin").exists()
    assert main(["run", "--config", TINY, "--variant", "zm", "--out", str(tmp_path / "run")]) == 0
    s = status(capsys)
    assert s["steps"] == 5 and s["rmse_m"] >= 0
    assert (tmp_path / "run" / "tracks.csv").exists()


def test_crlb_both_modes(tmp_path, capsys):
    assert main(["crlb", "--config", TINY, "--out", str(tmp_path)]) == 0
    s = status(capsys)
    assert s["final_peb_m"]["coherent"] <= s["final_peb_m"]["noncoherent"]
    assert (tmp_path / "bounds.csv").read_text().startswith("step[-],mode[-],peb[m]")


def test_mc_tiny(tmp_path, capsys):
    out = tmp_path / "mc"
    assert main(["mc", "--config", TINY, "--variant", "both", "--runs", "2", "--out", str(out)]) == 0
    s = status(capsys)
    assert set(s["summary"]) == {"nzm", "zm"}
    assert (out / "metrics_nzm.csv").exists() and (out / "run001" / "zm" / "estimates.csv").exists()


def test_seed_override_changes_data(tmp_path, capsys):
    main(["simulate", "--config", TINY, "--seed", "5", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", TINY, "--seed", "6", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "observations.bin").read_bytes() != (tmp_path / "b" / "observations.bin").read_bytes()
    assert main(["simulate", "--config", TINY, "--seed", "-1", "--out", str(tmp_path / "c")]) == 1
