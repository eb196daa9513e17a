import json
import subprocess
import sys

import pytest

from sgxleak.cli import main

SMALL = {"seed": 3, "corpus": {"n_pages": 8},
         "chain": {"rules": {"n_waf": 60, "n_ids": 120, "n_nat": 60}},
         "attack": {"n_visits": 5, "train": {"epochs": 150}},
         "sweeps": {"defenses": [{}, {"padding": {"mode": "max_len", "max_bytes": 1460}}]}}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_stagewise_pipeline(tmp_path, cfg_path, capsys):
    out = str(tmp_path / "run")
    steps = [["corpus", "gen"], ["trace", "run"], ["profile", "build"], ["classifier", "train"],
             ["attack", "run"], ["report"], ["defend", "sweep"]]
    assert main(steps[0] + ["--config", str(cfg_path), "--out", out]) == 0
    (tmp_path / "run" / "config.json").write_text(cfg_path.read_text())
    for step in steps[1:]:
        assert main(step + ["--out", out]) == 0, step
    text = capsys.readouterr().out
    assert "page accuracy" in text and "sweep defense" in text
    assert (tmp_path / "run" / "sweep_defense.csv").read_text().count("\n") == 3


def test_stagewise_matches_single_run(tmp_path, cfg_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", "--config", str(cfg_path), "--out", a]) == 0
    for step in (["corpus", "gen"], ["trace", "run"], ["profile", "build"],
                 ["classifier", "train"], ["attack", "run"], ["report"]):
        assert main(step + ["--config", str(cfg_path), "--out", b]) == 0
    for name in ("trace.isc", "profiles.isp", "detections.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    ra = (tmp_path / "a" / "report.csv").read_text().splitlines()
    rb = (tmp_path / "b" / "report.csv").read_text().splitlines()
    assert ra == rb


def test_seed_flag_overrides(tmp_path, cfg_path):
    assert main(["corpus", "gen", "--config", str(cfg_path), "--seed", "9",
                 "--out", str(tmp_path / "s9")]) == 0
    assert main(["corpus", "gen", "--config", str(cfg_path), "--out", str(tmp_path / "s3")]) == 0
    assert (tmp_path / "s9" / "corpus.json").read_text() != (tmp_path / "s3" / "corpus.json").read_text()


def test_config_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"corpus": {"n_pages": -3}}))
    assert main(["corpus", "gen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["corpus", "gen", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "o")]) == 1


def test_stage_failure_exit_2(tmp_path, capsys):
    # attack before any profile exists
    assert main(["attack", "run", "--out", str(tmp_path / "empty")]) == 2
    assert "missing" in capsys.readouterr().err


def test_console_entry_point(tmp_path, cfg_path):
    r = subprocess.run([sys.executable, "-m", "sgxleak.cli", "corpus", "gen", "--config",
                        str(cfg_path), "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert r.returncode == 0 and "pages" in r.stdout
