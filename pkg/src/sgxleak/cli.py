"""Command-line driver. Each subcommand runs one stage against an output directory.

    sgxleak corpus gen        --out runs/a [--config cfg.json] [--seed N]
    sgxleak trace run         --out runs/a
    sgxleak profile build     --out runs/a
    sgxleak classifier train  --out runs/a
    sgxleak attack run        --out runs/a
    sgxleak report            --out runs/a
    sgxleak defend sweep      --out runs/a
    sgxleak run               --out runs/a      (all of the above in one go)

Stages read what earlier stages wrote into ``--out``. The config is taken
from ``--config`` when given, otherwise from ``<out>/config.json``, otherwise
defaults. Exit status: 0 success, 1 configuration error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (ConfigError, ExperimentConfig, GroundTruth, StageError, load_classifiers,
                         load_config, load_detections, load_online, make_report, noise_sweep,
                         defense_sweep, detections_json, run_experiment, save_classifiers,
                         stage_attack, stage_corpus, stage_online, stage_profile, stage_rules,
                         stage_stream, stage_train, write_report)
from .profiling import dump_profiles, load_profiles
from .recognition import detections_csv
from .trace import trace_bytes
from .traffic import Corpus, SessionStream

log = logging.getLogger("sgxleak")

DEFAULT_DEFENSES = [
    {},
    {"padding": {"mode": "multiple_of", "x_bytes": 200}},
    {"padding": {"mode": "multiple_of", "x_bytes": 500}},
    {"padding": {"mode": "multiple_of", "x_bytes": 1000}},
    {"padding": {"mode": "max_len", "max_bytes": 1460}},
    {"batch": {"threshold_n": 8}},
    {"padding": {"mode": "max_len", "max_bytes": 1460}, "batch": {"threshold_n": 8}},
]


def _config(args) -> ExperimentConfig:
    out = Path(args.out)
    if args.config:
        cfg = load_config(args.config)
    elif (out / "config.json").exists():
        cfg = load_config(out / "config.json")
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _need(out: Path, name: str) -> Path:
    p = out / name
    if not p.exists():
        raise FileNotFoundError(f"{p} missing; run the earlier stage first")
    return p


def _corpus(cfg, out: Path) -> Corpus:
    p = out / "corpus.json"
    if p.exists():
        return Corpus.from_json(p.read_text())
    corpus = stage_corpus(cfg)
    p.write_text(corpus.to_json())
    return corpus


def _profiles(out: Path):
    return load_profiles(_need(out, "profiles.isp").read_text())


def cmd_corpus_gen(cfg, out: Path) -> None:
    corpus = stage_corpus(cfg)
    (out / "corpus.json").write_text(corpus.to_json())
    print(f"{len(corpus.pages)} pages, {len(corpus.tracked_ids)} tracked -> {out / 'corpus.json'}")


def cmd_trace_run(cfg, out: Path) -> None:
    corpus = _corpus(cfg, out)
    plan, stream = stage_stream(cfg, corpus)
    run = stage_online(cfg, stage_rules(cfg), stream)
    (out / "plan.json").write_text(json.dumps(plan))
    (out / "session.csv").write_text(stream.to_csv())
    (out / "trace.isc").write_bytes(trace_bytes(run.events))
    (out / "units.csv").write_text(run.units_csv())
    (out / "online.json").write_text(json.dumps({"final_cycle": run.final_cycle,
                                                 "packets": run.packets}))
    print(f"{len(stream)} packets, {len(run.events)} interface events -> {out / 'trace.isc'}")


def cmd_profile_build(cfg, out: Path) -> None:
    profiles = stage_profile(cfg, _corpus(cfg, out), stage_rules(cfg))
    (out / "profiles.isp").write_text(dump_profiles(profiles))
    print(f"{len(profiles)} profiles -> {out / 'profiles.isp'}")


def cmd_classifier_train(cfg, out: Path) -> None:
    clf = stage_train(cfg, _profiles(out))
    save_classifiers(out, clf)
    print(f"{len(clf.params)} classifiers ({len(clf.nonconverged)} not converged) "
          f"-> {out / 'classifiers'}")


def cmd_attack_run(cfg, out: Path) -> None:
    dets = stage_attack(cfg, _profiles(out), load_classifiers(out).params, load_online(out))
    (out / "detections.csv").write_text(detections_csv(dets))
    (out / "detections.json").write_text(detections_json(dets))
    print(f"{len(dets)} detections -> {out / 'detections.csv'}")


def _ground_truth(out: Path):
    corpus = Corpus.from_json(_need(out, "corpus.json").read_text())
    plan = [tuple(v) for v in json.loads(_need(out, "plan.json").read_text())]
    stream = SessionStream.from_csv(_need(out, "session.csv").read_text())
    return corpus, plan, stream, GroundTruth.build(corpus, plan, stream)


def cmd_report(cfg, out: Path) -> None:
    corpus, plan, stream, gt = _ground_truth(out)
    dets = load_detections(_need(out, "detections.json").read_text())
    clf = load_classifiers(out)
    report = make_report(cfg, dets, gt, stream, load_online(out), len(_profiles(out)),
                         len(clf.nonconverged))
    write_report(out, report)
    sys.stdout.write(report.summary())


def cmd_defend_sweep(cfg, out: Path) -> None:
    corpus, plan, stream, gt = _ground_truth(out)
    rules = stage_rules(cfg)
    profiles = _profiles(out)
    clf = load_classifiers(out).params
    defenses = cfg.sweeps.defenses or DEFAULT_DEFENSES
    rows = defense_sweep(cfg, rules, stream, profiles, clf, gt, defenses)
    sweeps = {"defense": rows}
    if cfg.sweeps.noise:
        sweeps["noise"] = noise_sweep(cfg, rules, stream, profiles, clf, gt, cfg.sweeps.noise)
    for name, rs in sweeps.items():
        keys = list(rs[0])
        lines = [",".join(keys)] + [",".join(str(r[k]) for k in keys) for r in rs]
        (out / f"sweep_{name}.csv").write_text("\n".join(lines) + "\n")
        print(f"sweep {name} -> {out / f'sweep_{name}.csv'}")
        for r in rs:
            print("  " + ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                   for k, v in r.items()))


def cmd_run(cfg, out: Path) -> None:
    arts = run_experiment(cfg, out)
    sys.stdout.write(arts.report.summary())


COMMANDS = {
    ("corpus", "gen"): cmd_corpus_gen,
    ("trace", "run"): cmd_trace_run,
    ("profile", "build"): cmd_profile_build,
    ("classifier", "train"): cmd_classifier_train,
    ("attack", "run"): cmd_attack_run,
    ("defend", "sweep"): cmd_defend_sweep,
    ("report",): cmd_report,
    ("run",): cmd_run,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgxleak", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="group", required=True)
    groups: dict = {}
    for key in COMMANDS:
        if len(key) == 1:
            _common(sub.add_parser(key[0]))
            continue
        group, action = key
        if group not in groups:
            groups[group] = sub.add_parser(group).add_subparsers(dest="action", required=True)
        _common(groups[group].add_parser(action))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    key = (args.group, args.action) if getattr(args, "action", None) else (args.group,)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[key](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any other stage failure
        print(f"error: {' '.join(key)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
