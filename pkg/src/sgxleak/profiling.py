"""Offline pattern collection: replay tracked pages, keep their constant packets."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .collector import Collector
from .enclave import ServiceChain
from .trace import PacketFeatureVector, ProfiledPacket, delays_in_range, extract_feature_vector
from .traffic import CorpusParams, PacketGroundTruth, WebPageSpec, render_visit, stable_hash

log = logging.getLogger(__name__)

PROFILE_HEADER = "ISCPROF 1"
MIN_INTERVAL = 0.05


class UntrackablePageError(ValueError):
    pass


@dataclass
class VisitObservation:
    features: list[PacketFeatureVector]
    times: list[float]
    packets: list[PacketGroundTruth] = field(default_factory=list)


@dataclass
class PageProfile:
    page_id: int
    packets: list[ProfiledPacket]
    interval_threshold_t: float
    exemplar_sequences: list[tuple[int, ...]]

    def __post_init__(self):
        if not self.packets:
            raise UntrackablePageError(f"page {self.page_id}: empty profile")
        if self.interval_threshold_t <= 0:
            raise ValueError("interval threshold must be positive")
        if not self.exemplar_sequences:
            raise ValueError("need at least one exemplar sequence")
        T = len(self.packets)
        for seq in self.exemplar_sequences:
            if any(not 0 <= i < T for i in seq):
                raise ValueError("exemplar index out of range")

    @property
    def T(self) -> int:
        return len(self.packets)

    @property
    def k(self) -> int:
        return len(self.exemplar_sequences)

    @property
    def per_visit_counts(self) -> list[int]:
        return [p.per_visit_count for p in self.packets]

    @property
    def total_per_visit(self) -> int:
        return sum(self.per_visit_counts)

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "interval_threshold_t": self.interval_threshold_t,
            "packets": [p.to_dict() for p in self.packets],
            "exemplar_sequences": [list(s) for s in self.exemplar_sequences],
            "total_per_visit": self.total_per_visit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PageProfile":
        return cls(d["page_id"], [ProfiledPacket.from_dict(p) for p in d["packets"]],
                   d["interval_threshold_t"], [tuple(s) for s in d["exemplar_sequences"]])


def dump_profiles(profiles: Sequence[PageProfile]) -> str:
    body = json.dumps([p.to_dict() for p in profiles], sort_keys=True)
    return f"{PROFILE_HEADER}\n{body}\n"


def load_profiles(text: str) -> list[PageProfile]:
    header, _, body = text.partition("\n")
    if header.strip() != PROFILE_HEADER:
        raise ValueError(f"not a profile file (header {header!r})")
    return [PageProfile.from_dict(d) for d in json.loads(body)]


def collect_visits(page: WebPageSpec, chain: ServiceChain, n_visits: int = 20, *, seed: int = 0,
                   params: Optional[CorpusParams] = None) -> list[VisitObservation]:
    """Replay ``n_visits`` independent visits, one packet in flight at a time.

    Feature vectors are rebuilt from what the attached collector observed.
    """
    if n_visits < 2:
        raise ValueError("profiling needs at least two visits")
    if chain.collector is None:
        chain.attach_collector(Collector(clock=chain.clock))
    col = chain.collector
    topo = chain.topology.enclave_ids
    out = []
    for v in range(n_visits):
        packets = render_visit(page, stable_hash("train", seed, page.page_id, v), 0.0,
                               visit_id=v, params=params)
        feats = []
        for p in packets:
            mark = col.mark()
            chain.process(p)
            feats.append(extract_feature_vector(col.since(mark), topo, chain.wanopt_id))
        out.append(VisitObservation(feats, [p.arrival_time for p in packets], packets))
    return out


def extract_constant_packets(visits: Sequence[VisitObservation], topology: tuple[int, ...] = ()
                             ) -> list[ProfiledPacket]:
    """Keep packets (keyed by discrete features) that appear in every visit."""
    if len(visits) < 2:
        raise ValueError("need at least two visits")
    counts = [Counter(fv.discrete_key() for fv in v.features) for v in visits]
    common = set(counts[0])
    for c in counts[1:]:
        common &= set(c)

    # Slot order: first appearance in the first visit.
    order = []
    seen = set()
    for fv in visits[0].features:
        k = fv.discrete_key()
        if k in common and k not in seen:
            seen.add(k)
            order.append(k)

    # A dynamic packet occasionally shares a constant packet's discrete key.
    # Per visit, keep only the occurrences closest to the key's median delay
    # so stray delays do not widen the range.
    obs = defaultdict(list)
    for v in visits:
        per_key = defaultdict(list)
        for fv in v.features:
            k = fv.discrete_key()
            if k in common:
                per_key[k].append(fv.delays)
        for k, ds in per_key.items():
            obs[k].append(ds)

    topo = topology or (visits[0].features[0].topology if visits[0].features else ())
    profiled = []
    for idx, k in enumerate(order):
        per_visit = [c[k] for c in counts]
        m = min(per_visit)
        if len(set(per_visit)) > 1:
            log.debug("packet %d: per-visit counts differ across visits %s; using minimum",
                      idx, sorted(set(per_visit)))
        allv = np.array([d for ds in obs[k] for d in ds], dtype=float)
        centre = np.median(allv, axis=0)
        kept = []
        for ds in obs[k]:
            arr = np.array(ds, dtype=float)
            dist = np.abs(arr - centre).sum(axis=1)
            kept.extend(arr[np.argsort(dist, kind="stable")[:m]])
        kept = np.array(kept, dtype=np.int64)
        ranges = tuple((int(lo), int(hi)) for lo, hi in zip(kept.min(axis=0), kept.max(axis=0)))
        profiled.append(ProfiledPacket(idx, k, ranges, m, tuple(topo)))
    return profiled


def build_profile(page_id: int, visits: Sequence[VisitObservation],
                  packets: Optional[Sequence[ProfiledPacket]] = None,
                  min_interval: float = MIN_INTERVAL) -> PageProfile:
    if packets is None:
        packets = extract_constant_packets(visits)
    if not packets:
        raise UntrackablePageError(f"page {page_id}: no constant packets")
    slot_of = {p.key: p for p in packets}

    def slot(fv):
        # Occurrences outside the profiled range are stray dynamic packets.
        pp = slot_of.get(fv.discrete_key())
        if pp is not None and delays_in_range(fv.delays, pp.delay_ranges):
            return pp.index
        return None

    t = 0.0
    exemplars = []
    for v in visits:
        slots = [slot(fv) for fv in v.features]
        times = [tm for s, tm in zip(slots, v.times) if s is not None]
        if times:
            t = max(t, max(times) - min(times))
        seq, seen = [], set()
        for s in slots:
            if s is not None and s not in seen:
                seen.add(s)
                seq.append(s)
        exemplars.append(tuple(seq))
    if t <= 0:
        t = min_interval
    return PageProfile(page_id, list(packets), t, exemplars)


def profile_page(page: WebPageSpec, chain: ServiceChain, n_visits: int = 20, *, seed: int = 0,
                 params: Optional[CorpusParams] = None) -> PageProfile:
    visits = collect_visits(page, chain, n_visits, seed=seed, params=params)
    return build_profile(page.page_id, visits, extract_constant_packets(visits))
