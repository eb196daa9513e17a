"""End-to-end experiment: corpus, offline profiling, classifier training, online
replay through the instrumented chain, recognition, and scoring.

Every stage is a plain function over in-memory values so that the command
line can run them one at a time against artifacts on disk, and
:func:`run_experiment` can chain them in one process.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .classifier import LSTMParams, TrainConfig, dump_params, load_params, train
from .collector import Collector, CollectorConfig
from .countermeasures import (BatchPolicy, MaxLen, PaddingPolicy, PaddingPolicyError,
                              padding_from_dict, padding_to_dict)
from .enclave import (ChainConfigError, ChainTopology, DelayModel, Role, RuleSet, ServiceChain,
                      generate_rules)
from .metrics import Score, bandwidth_overhead, packet_metrics, page_metrics
from .profiling import (PageProfile, UntrackablePageError, build_profile, collect_visits,
                        dump_profiles, extract_constant_packets, load_profiles)
from .recognition import BufferEntry, RecognitionEngine, RecognitionEvent, detections_csv
from .trace import InterfaceEvent, extract_feature_vector, read_trace, trace_bytes
from .traffic import (Corpus, CorpusConfigError, CorpusParams, SessionStream, generate_corpus,
                      interleave_sessions, make_visit_plan, stable_hash)

log = logging.getLogger(__name__)

NOMINAL_HZ = 3.4e9  # converts simulated cycles into a packets-per-second figure


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _build(cls, d: Optional[dict], what: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls) if f.init}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{what}: unknown keys {sorted(extra)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


@dataclass
class CorpusSection:
    n_pages: int = 100
    params: CorpusParams = field(default_factory=CorpusParams)


@dataclass
class RulesSection:
    n_waf: int = 1000
    n_ids: int = 3000
    n_nat: int = 1000


@dataclass
class ChainSection:
    ids_return: str = "nat"
    rules: RulesSection = field(default_factory=RulesSection)
    delay: DelayModel = field(default_factory=DelayModel)
    cipher_overhead: int = 29


@dataclass
class CountermeasureSection:
    padding: Optional[PaddingPolicy] = None
    batch: Optional[BatchPolicy] = None


@dataclass
class AttackSection:
    n_visits: int = 20
    candidate_cap: int = 4096
    legal_threshold: float = 0.5
    profile_noise: int = 0
    profile_under_defense: bool = False
    crosspage_exemplars: int = 2  # exemplars borrowed from each other page as negatives
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class PlanSection:
    rounds: int = 2
    span: float = 20.0
    round_gap: float = 45.0


@dataclass
class SweepSection:
    noise: list = field(default_factory=list)  # online delay-noise amplitudes, cycles
    defenses: list = field(default_factory=list)  # countermeasure dicts


@dataclass
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusSection = field(default_factory=CorpusSection)
    chain: ChainSection = field(default_factory=ChainSection)
    collector: CollectorConfig = field(default_factory=CollectorConfig)
    countermeasures: CountermeasureSection = field(default_factory=CountermeasureSection)
    attack: AttackSection = field(default_factory=AttackSection)
    plan: PlanSection = field(default_factory=PlanSection)
    sweeps: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.corpus.n_pages < 1:
            raise ConfigError("corpus.n_pages must be >= 1")
        try:
            self.corpus.params.validate()
        except CorpusConfigError as exc:
            raise ConfigError(f"corpus.params: {exc}") from exc
        if self.attack.n_visits < 2:
            raise ConfigError("attack.n_visits must be >= 2")
        if self.attack.candidate_cap < 1:
            raise ConfigError("attack.candidate_cap must be >= 1")
        if self.plan.rounds < 1 or self.plan.span < 0:
            raise ConfigError("plan needs rounds >= 1 and span >= 0")
        if self.attack.profile_noise < 0:
            raise ConfigError("attack.profile_noise must be >= 0")
        try:
            self.topology()
        except ChainConfigError as exc:
            raise ConfigError(f"chain: {exc}") from exc

    def sub_seed(self, *tag) -> int:
        return stable_hash("seed", self.seed, *tag) & (2**63 - 1)

    def topology(self) -> ChainTopology:
        return ChainTopology(ids_return=self.chain.ids_return)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown top-level keys {sorted(extra)}")
        c = dict(d.get("corpus") or {})
        corpus = CorpusSection(int(c.pop("n_pages", 100)),
                               _build(CorpusParams, c.pop("params", None), "corpus.params"))
        if c:
            raise ConfigError(f"corpus: unknown keys {sorted(c)}")
        ch = dict(d.get("chain") or {})
        chain = ChainSection(
            ids_return=ch.pop("ids_return", "nat"),
            rules=_build(RulesSection, ch.pop("rules", None), "chain.rules"),
            delay=_build(DelayModel, ch.pop("delay", None), "chain.delay"),
            cipher_overhead=int(ch.pop("cipher_overhead", 29)),
        )
        if ch:
            raise ConfigError(f"chain: unknown keys {sorted(ch)}")
        col = dict(d.get("collector") or {})
        if "enabled_channels" in col:
            col["enabled_channels"] = frozenset(col["enabled_channels"])
        collector = _build(CollectorConfig, col, "collector")
        cm = d.get("countermeasures") or {}
        countermeasures = countermeasures_from_dict(cm)
        a = dict(d.get("attack") or {})
        tc = _build(TrainConfig, a.pop("train", None), "attack.train")
        attack = _build(AttackSection, dict(a, train=tc), "attack")
        plan = _build(PlanSection, d.get("plan"), "plan")
        sweeps = _build(SweepSection, d.get("sweeps"), "sweeps")
        for cfg in sweeps.defenses:
            countermeasures_from_dict(cfg)
        return cls(int(d.get("seed", 0)), corpus, chain, collector, countermeasures, attack, plan,
                   sweeps)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "corpus": {"n_pages": self.corpus.n_pages, "params": asdict(self.corpus.params)},
            "chain": {"ids_return": self.chain.ids_return, "rules": asdict(self.chain.rules),
                      "delay": asdict(self.chain.delay),
                      "cipher_overhead": self.chain.cipher_overhead},
            "collector": {"noise_amplitude": self.collector.noise_amplitude,
                          "cycle_per_instruction_scale": self.collector.cycle_per_instruction_scale,
                          "enabled_channels": sorted(self.collector.enabled_channels),
                          "seed": self.collector.seed},
            "countermeasures": countermeasures_to_dict(self.countermeasures),
            "attack": dict(asdict(self.attack)),
            "plan": asdict(self.plan),
            "sweeps": asdict(self.sweeps),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def countermeasures_from_dict(d: Optional[dict]) -> CountermeasureSection:
    d = dict(d or {})
    extra = set(d) - {"padding", "batch"}
    if extra:
        raise ConfigError(f"countermeasures: unknown keys {sorted(extra)}")
    try:
        padding = padding_from_dict(d.get("padding"))
        batch = _build(BatchPolicy, d["batch"], "batch") if d.get("batch") else None
    except (PaddingPolicyError, KeyError, TypeError) as exc:
        raise ConfigError(f"countermeasures: {exc}") from exc
    return CountermeasureSection(padding, batch)


def countermeasures_to_dict(cm: CountermeasureSection) -> dict:
    return {"padding": padding_to_dict(cm.padding),
            "batch": asdict(cm.batch) if cm.batch else None}


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------- stages

def stage_corpus(cfg: ExperimentConfig) -> Corpus:
    return generate_corpus(cfg.sub_seed("corpus"), cfg.corpus.n_pages, cfg.corpus.params)


def stage_rules(cfg: ExperimentConfig) -> RuleSet:
    r = cfg.chain.rules
    return generate_rules(cfg.sub_seed("rules"), r.n_waf, r.n_ids, r.n_nat)


def stage_stream(cfg: ExperimentConfig, corpus: Corpus) -> tuple[list, SessionStream]:
    p = cfg.plan
    plan = make_visit_plan([pg.page_id for pg in corpus.pages], cfg.sub_seed("plan"),
                           rounds=p.rounds, span=p.span, round_gap=p.round_gap)
    return plan, interleave_sessions(corpus, plan, cfg.sub_seed("stream"))


@dataclass
class OnlineRun:
    """What the observer recorded: the trace plus per-delivery event spans."""

    events: list[InterfaceEvent]
    units: list[tuple[str, float, int, int]]  # uid, time, first event, end event
    final_cycle: int
    packets: int

    def units_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["packet_uid", "time", "first_event", "end_event"])
        for uid, t, a, b in self.units:
            w.writerow([uid, repr(t), a, b])
        return out.getvalue()

    @staticmethod
    def parse_units(text: str) -> list[tuple[str, float, int, int]]:
        return [(r["packet_uid"], float(r["time"]), int(r["first_event"]), int(r["end_event"]))
                for r in csv.DictReader(io.StringIO(text))]


def make_chain(cfg: ExperimentConfig, rules: RuleSet, *, noise: int, noise_seed: int,
               padding=None, batch=None, collector: Optional[Collector] = None) -> ServiceChain:
    delay = replace(cfg.chain.delay, noise_amplitude=int(noise))
    return ServiceChain(cfg.topology(), rules, delay, padding=padding, batch=batch,
                        collector=collector, noise_seed=noise_seed,
                        cipher_overhead=cfg.chain.cipher_overhead)


def stage_online(cfg: ExperimentConfig, rules: RuleSet, stream: SessionStream, *,
                 noise: Optional[int] = None,
                 countermeasures: Optional[CountermeasureSection] = None) -> OnlineRun:
    cm = countermeasures or cfg.countermeasures
    collector = Collector(replace(cfg.collector, seed=cfg.sub_seed("collector")))
    chain = make_chain(cfg, rules,
                       noise=cfg.chain.delay.noise_amplitude if noise is None else noise,
                       noise_seed=cfg.sub_seed("online-noise"), padding=cm.padding,
                       batch=cm.batch, collector=collector)
    units = []
    pos = 0
    for u in chain.run_stream(stream.packets):
        units.append((u.uid, u.time, pos, pos + len(u.events)))
        pos += len(u.events)
    return OnlineRun(list(collector.finalize().events), units, chain.clock.now, len(stream))


def stage_profile(cfg: ExperimentConfig, corpus: Corpus, rules: RuleSet) -> list[PageProfile]:
    """Build one profile per tracked page on the attacker's replica of the chain.

    The replica runs undefended unless ``profile_under_defense`` is set, in
    which case padding (the only countermeasure compatible with one packet in
    flight) is mirrored.
    """
    a = cfg.attack
    padding = cfg.countermeasures.padding if a.profile_under_defense else None
    profiles = []
    for pid in corpus.tracked_ids:
        chain = make_chain(cfg, rules, noise=a.profile_noise,
                           noise_seed=cfg.sub_seed("profile-noise", pid), padding=padding)
        visits = collect_visits(corpus.page(pid), chain, a.n_visits,
                                seed=cfg.sub_seed("profile", pid), params=corpus.params)
        try:
            profiles.append(build_profile(pid, visits, extract_constant_packets(visits)))
        except UntrackablePageError as exc:
            log.warning("skipping page %d: %s", pid, exc)
    return profiles


@dataclass
class TrainedClassifiers:
    params: dict[int, LSTMParams]
    nonconverged: list[int]


def stage_train(cfg: ExperimentConfig, profiles: Sequence[PageProfile]) -> TrainedClassifiers:
    a = cfg.attack
    borrowed = {p.page_id: list(p.exemplar_sequences[:a.crosspage_exemplars]) for p in profiles}
    params, bad = {}, []
    for p in profiles:
        others = [s for q in profiles if q.page_id != p.page_id for s in borrowed[q.page_id]]
        tc = replace(a.train, seed=cfg.sub_seed("train", p.page_id, a.train.seed))
        res = train(p, tc, others)
        params[p.page_id] = res.params
        if not res.converged:
            bad.append(p.page_id)
    return TrainedClassifiers(params, bad)


def stage_attack(cfg: ExperimentConfig, profiles: Sequence[PageProfile],
                 classifiers: dict[int, LSTMParams], run: OnlineRun) -> list[RecognitionEvent]:
    topo = cfg.topology()
    wanopt = topo.id_of(Role.WANOPT)
    engine = RecognitionEngine(profiles, classifiers, cap=cfg.attack.candidate_cap,
                               threshold=cfg.attack.legal_threshold)
    for uid, t, a, b in run.units:
        if a == b:
            continue
        fv = extract_feature_vector(run.events[a:b], topo.enclave_ids, wanopt)
        engine.ingest(fv, t, uid)
    return engine.events


# ---------------------------------------------------------------- scoring

@dataclass
class MetricsReport:
    page_accuracy: float
    page_recall: float
    packet_accuracy: float
    packet_recall: float
    page_accuracy_undefined: bool
    packet_accuracy_undefined: bool
    bandwidth_overhead: float
    cycles_per_packet: float
    packets_per_second: float
    n_detections: int
    n_tracked_visits: int
    n_profiles: int
    n_nonconverged: int
    sweeps: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("page_accuracy", "page_recall", "packet_accuracy", "packet_recall"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.bandwidth_overhead < 0:
            raise ValueError("overhead must be >= 0")

    def scalar_rows(self) -> list[tuple[str, Any]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "sweeps"]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.scalar_rows():
            w.writerow([k, repr(v) if isinstance(v, float) else v])
        return out.getvalue()

    def sweep_csv(self, name: str) -> str:
        rows = self.sweeps[name]
        out = io.StringIO()
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return out.getvalue()

    def summary(self) -> str:
        lines = [
            f"page accuracy   {self.page_accuracy:.4f}"
            + ("  (no detections)" if self.page_accuracy_undefined else ""),
            f"page recall     {self.page_recall:.4f}",
            f"packet accuracy {self.packet_accuracy:.4f}"
            + ("  (no attributions)" if self.packet_accuracy_undefined else ""),
            f"packet recall   {self.packet_recall:.4f}",
            f"detections {self.n_detections} over {self.n_tracked_visits} tracked visits, "
            f"{self.n_profiles} profiles ({self.n_nonconverged} classifiers not converged)",
            f"bandwidth overhead {self.bandwidth_overhead:.4f}",
            f"simulated {self.cycles_per_packet:.1f} cycles/packet, "
            f"{self.packets_per_second:.0f} packets/s at {NOMINAL_HZ / 1e9:.1f} GHz",
        ]
        for name, rows in self.sweeps.items():
            lines.append(f"sweep {name}:")
            for r in rows:
                lines.append("  " + ", ".join(f"{k}={_fmt(v)}" for k, v in r.items()))
        return "\n".join(lines) + "\n"


def _fmt(v):
    return f"{v:.4f}" if isinstance(v, float) else str(v)


@dataclass
class GroundTruth:
    tracked_visits: dict[int, int]
    truth_page: dict[str, int]
    n_tracked_packets: int

    @classmethod
    def build(cls, corpus: Corpus, plan, stream: SessionStream) -> "GroundTruth":
        tracked = set(corpus.tracked_ids)
        tv = {i: pid for i, (pid, _) in enumerate(plan) if pid in tracked}
        truth = {p.packet_uid: p.page_id for p in stream.packets}
        n = sum(1 for p in stream.packets if p.visit_id in tv)
        return cls(tv, truth, n)


def score(detections, gt: GroundTruth) -> tuple[Score, Score]:
    return (page_metrics(detections, gt.tracked_visits),
            packet_metrics(detections, gt.truth_page, gt.n_tracked_packets))


def make_report(cfg: ExperimentConfig, detections, gt: GroundTruth, stream: SessionStream,
                run: OnlineRun, n_profiles: int, n_nonconverged: int,
                sweeps: Optional[dict] = None) -> MetricsReport:
    page, pkt = score(detections, gt)
    overhead = bandwidth_overhead(stream.packets, cfg.countermeasures.padding,
                                  cfg.chain.cipher_overhead)
    cpp = run.final_cycle / max(run.packets, 1)
    return MetricsReport(page.accuracy, page.recall, pkt.accuracy, pkt.recall,
                         page.accuracy_undefined, pkt.accuracy_undefined, overhead, cpp,
                         NOMINAL_HZ / cpp if cpp else 0.0, page.n_identified, page.n_tracked,
                         n_profiles, n_nonconverged, sweeps or {})


def noise_sweep(cfg: ExperimentConfig, rules: RuleSet, stream: SessionStream,
                profiles, classifiers, gt: GroundTruth, amplitudes: Sequence[int]) -> list[dict]:
    rows = []
    for amp in amplitudes:
        run = stage_online(cfg, rules, stream, noise=int(amp))
        page, pkt = score(stage_attack(cfg, profiles, classifiers, run), gt)
        rows.append({"noise_amplitude": int(amp), "page_accuracy": page.accuracy,
                     "page_recall": page.recall, "packet_accuracy": pkt.accuracy,
                     "packet_recall": pkt.recall, "detections": page.n_identified})
    return rows


def defense_sweep(cfg: ExperimentConfig, rules: RuleSet, stream: SessionStream,
                  profiles, classifiers, gt: GroundTruth, defenses: Sequence[dict]) -> list[dict]:
    rows = []
    for d in defenses:
        cm = countermeasures_from_dict(d)
        run = stage_online(cfg, rules, stream, countermeasures=cm)
        page, pkt = score(stage_attack(cfg, profiles, classifiers, run), gt)
        cpp = run.final_cycle / max(run.packets, 1)
        rows.append({"defense": describe(cm), "page_accuracy": page.accuracy,
                     "page_recall": page.recall, "packet_accuracy": pkt.accuracy,
                     "packet_recall": pkt.recall, "detections": page.n_identified,
                     "bandwidth_overhead": bandwidth_overhead(stream.packets, cm.padding,
                                                              cfg.chain.cipher_overhead),
                     "cycles_per_packet": cpp})
    return rows


def describe(cm: CountermeasureSection) -> str:
    parts = []
    if cm.padding is not None:
        p = padding_to_dict(cm.padding)
        parts.append(f"{p['mode']}={p.get('max_bytes', p.get('x_bytes'))}")
    if cm.batch is not None:
        parts.append(f"batch={cm.batch.threshold_n}")
    return "+".join(parts) or "none"


# ---------------------------------------------------------------- persistence

def detections_json(events: Sequence[RecognitionEvent]) -> str:
    doc = [{"page_id": e.page_id, "detection_time": e.detection_time, "r_before": e.r_before,
            "n_slots": e.n_slots,
            "contributing": [[b.uid, b.slot, b.arrival_time, b.arrival_seq] for b in e.contributing],
            "attributed": [[b.uid, b.slot, b.arrival_time, b.arrival_seq] for b in e.attributed]}
           for e in events]
    return json.dumps(doc, sort_keys=True)


def load_detections(text: str) -> list[RecognitionEvent]:
    out = []
    for d in json.loads(text):
        def entries(rows):
            return [BufferEntry(None, t, seq, slot, d["page_id"], uid) for uid, slot, t, seq in rows]
        out.append(RecognitionEvent(d["page_id"], d["detection_time"], d["r_before"],
                                    entries(d["contributing"]), entries(d["attributed"]),
                                    d["n_slots"]))
    return out


def save_classifiers(out: Path, classifiers: TrainedClassifiers) -> None:
    d = out / "classifiers"
    d.mkdir(parents=True, exist_ok=True)
    for pid, p in sorted(classifiers.params.items()):
        (d / f"page_{pid}.isn").write_text(dump_params(p))
    (d / "nonconverged.json").write_text(json.dumps(sorted(classifiers.nonconverged)))


def load_classifiers(out: Path) -> TrainedClassifiers:
    d = out / "classifiers"
    params = {int(f.stem.split("_", 1)[1]): load_params(f.read_text())
              for f in sorted(d.glob("page_*.isn"))}
    bad_file = d / "nonconverged.json"
    bad = json.loads(bad_file.read_text()) if bad_file.exists() else []
    return TrainedClassifiers(params, bad)


@dataclass
class Artifacts:
    """In-memory results of a full run."""

    config: ExperimentConfig
    corpus: Corpus
    plan: list
    stream: SessionStream
    run: OnlineRun
    profiles: list[PageProfile]
    classifiers: TrainedClassifiers
    detections: list[RecognitionEvent]
    report: MetricsReport
    timing: dict


def _stage(name: str, timing: dict, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        result = fn(*args, **kwargs)
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    timing[name] = time.perf_counter() - t0
    return result


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Artifacts:
    """Run every stage; when ``out_dir`` is given, persist all artifacts there."""
    timing: dict = {}
    corpus = _stage("corpus", timing, stage_corpus, cfg)
    rules = _stage("rules", timing, stage_rules, cfg)
    plan, stream = _stage("stream", timing, stage_stream, cfg, corpus)
    profiles = _stage("profile", timing, stage_profile, cfg, corpus, rules)
    clf = _stage("train", timing, stage_train, cfg, profiles)
    run = _stage("online", timing, stage_online, cfg, rules, stream)
    dets = _stage("attack", timing, stage_attack, cfg, profiles, clf.params, run)
    gt = GroundTruth.build(corpus, plan, stream)
    sweeps = {}
    if cfg.sweeps.noise:
        sweeps["noise"] = _stage("noise_sweep", timing, noise_sweep, cfg, rules, stream, profiles,
                                 clf.params, gt, cfg.sweeps.noise)
    if cfg.sweeps.defenses:
        sweeps["defense"] = _stage("defense_sweep", timing, defense_sweep, cfg, rules, stream,
                                   profiles, clf.params, gt, cfg.sweeps.defenses)
    report = make_report(cfg, dets, gt, stream, run, len(profiles), len(clf.nonconverged), sweeps)
    if timing.get("online"):
        timing["wall_packets_per_second"] = run.packets / timing["online"]
    arts = Artifacts(cfg, corpus, plan, stream, run, profiles, clf, dets, report, timing)
    if out_dir is not None:
        _stage("persist", timing, persist, arts, Path(out_dir))
    return arts


def persist(a: Artifacts, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(a.config.to_json())
    (out / "corpus.json").write_text(a.corpus.to_json())
    (out / "plan.json").write_text(json.dumps(a.plan))
    (out / "session.csv").write_text(a.stream.to_csv())
    (out / "trace.isc").write_bytes(trace_bytes(a.run.events))
    (out / "units.csv").write_text(a.run.units_csv())
    (out / "online.json").write_text(json.dumps({"final_cycle": a.run.final_cycle,
                                                 "packets": a.run.packets}))
    (out / "profiles.isp").write_text(dump_profiles(a.profiles))
    save_classifiers(out, a.classifiers)
    (out / "detections.csv").write_text(detections_csv(a.detections))
    (out / "detections.json").write_text(detections_json(a.detections))
    write_report(out, a.report)
    (out / "timing.json").write_text(json.dumps(a.timing, indent=1, sort_keys=True))


def write_report(out: Path, report: MetricsReport) -> None:
    (out / "report.csv").write_text(report.to_csv())
    for name in report.sweeps:
        if report.sweeps[name]:
            (out / f"sweep_{name}.csv").write_text(report.sweep_csv(name))
    (out / "summary.txt").write_text(report.summary())


def load_online(out: Path) -> OnlineRun:
    meta = json.loads((out / "online.json").read_text())
    events = read_trace((out / "trace.isc").read_bytes())
    units = OnlineRun.parse_units((out / "units.csv").read_text())
    return OnlineRun(events, units, meta["final_cycle"], meta["packets"])
