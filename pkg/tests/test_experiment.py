import csv
import io
import json

import pytest

from sgxleak.countermeasures import MultipleOf
from sgxleak.experiment import (ConfigError, ExperimentConfig, MetricsReport, StageError,
                                load_classifiers, load_config, load_detections, load_online,
                                run_experiment)
from sgxleak.metrics import bandwidth_overhead
from sgxleak.profiling import load_profiles
from sgxleak.traffic import SessionStream

SMALL = {"seed": 3, "corpus": {"n_pages": 8},
         "chain": {"rules": {"n_waf": 60, "n_ids": 120, "n_nat": 60}},
         "attack": {"n_visits": 5, "train": {"epochs": 150}}}


def small(**over):
    d = json.loads(json.dumps(SMALL))
    d.update(over)
    return ExperimentConfig.from_dict(d)


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"corpus": {"n_pages": 0}},
    {"corpus": {"params": {"dynamic_fraction": 1.5}}},
    {"chain": {"ids_return": "nowhere"}},
    {"chain": {"delay": {"nonsense": 2}}},
    {"attack": {"n_visits": 1}},
    {"countermeasures": {"padding": {"mode": "multiple_of", "x_bytes": 0}}},
    {"countermeasures": {"shield": True}},
    {"seed": -1},
])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_unreadable_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_roundtrip():
    cfg = small(countermeasures={"padding": {"mode": "multiple_of", "x_bytes": 200}},
                sweeps={"noise": [0, 10]})
    assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg
    assert cfg.countermeasures.padding == MultipleOf(200)


def test_sub_seeds_differ_by_tag():
    cfg = small()
    assert cfg.sub_seed("corpus") != cfg.sub_seed("rules")
    assert cfg.sub_seed("corpus") == small().sub_seed("corpus")


def test_report_fraction_validation():
    with pytest.raises(ValueError):
        MetricsReport(1.2, 0, 0, 0, False, False, 0, 1, 1, 0, 0, 0, 0)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small(countermeasures={"padding": {"mode": "multiple_of", "x_bytes": 200}})
    return run_experiment(cfg, out), out


def test_artifacts_written(run_dir):
    _, out = run_dir
    for name in ("config.json", "corpus.json", "plan.json", "session.csv", "trace.isc",
                 "units.csv", "online.json", "profiles.isp", "detections.csv",
                 "detections.json", "report.csv", "summary.txt", "timing.json"):
        assert (out / name).exists(), name
    assert (out / "classifiers").is_dir()


def test_persisted_artifacts_reload(run_dir):
    arts, out = run_dir
    assert load_profiles((out / "profiles.isp").read_text()) == arts.profiles
    assert load_classifiers(out).params.keys() == arts.classifiers.params.keys()
    online = load_online(out)
    assert online.events == arts.run.events and online.units == arts.run.units
    dets = load_detections((out / "detections.json").read_text())
    assert [d.page_id for d in dets] == [d.page_id for d in arts.detections]


def test_overhead_recomputed_from_session(run_dir):
    arts, out = run_dir
    stream = SessionStream.from_csv((out / "session.csv").read_text())
    rows = dict(csv.reader(io.StringIO((out / "report.csv").read_text())))
    direct = bandwidth_overhead(stream.packets, MultipleOf(200))
    assert float(rows["bandwidth_overhead"]) == pytest.approx(direct, rel=1e-12)
    assert direct > 0


def test_report_fractions_in_range(run_dir):
    r = run_dir[0].report
    for v in (r.page_accuracy, r.page_recall, r.packet_accuracy, r.packet_recall):
        assert 0.0 <= v <= 1.0


def test_determinism_small(tmp_path):
    a = run_experiment(small(), tmp_path / "a")
    b = run_experiment(small(), tmp_path / "b")
    assert (tmp_path / "a" / "trace.isc").read_bytes() == (tmp_path / "b" / "trace.isc").read_bytes()
    assert a.report == b.report
    assert (tmp_path / "a" / "report.csv").read_text() == (tmp_path / "b" / "report.csv").read_text()


def test_seed_changes_trace(tmp_path):
    run_experiment(small(), tmp_path / "a")
    run_experiment(small(seed=4), tmp_path / "b")
    assert (tmp_path / "a" / "trace.isc").read_bytes() != (tmp_path / "b" / "trace.isc").read_bytes()


def test_stage_failure_is_wrapped():
    # MaxLen below the largest payload makes the online stage fail
    cfg = small(countermeasures={"padding": {"mode": "max_len", "max_bytes": 10}})
    with pytest.raises(StageError) as info:
        run_experiment(cfg)
    assert info.value.stage in ("online", "profile")


def test_sweeps_in_report():
    cfg = small(sweeps={"noise": [0, 500], "defenses": [{}, {"batch": {"threshold_n": 8}}]})
    rep = run_experiment(cfg).report
    assert [r["noise_amplitude"] for r in rep.sweeps["noise"]] == [0, 500]
    assert len(rep.sweeps["defense"]) == 2
    assert rep.sweeps["noise"][0]["page_recall"] >= rep.sweeps["noise"][1]["page_recall"]
