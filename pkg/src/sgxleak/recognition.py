"""Online recognition: matching indicators, the timed information buffer, page
detection by appearance ratio, and packet attribution."""

from __future__ import annotations

import csv
import io
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .classifier import LSTMParams, predict_proba
from .profiling import PageProfile
from .trace import PacketFeatureVector, delays_in_range

log = logging.getLogger(__name__)

BUFFER_TTL = 30.0
CANDIDATE_CAP = 4096
LEGAL_THRESHOLD = 0.5
DETECTION_COLUMNS = ["detection_time", "page_id", "r_before", "entries_attributed"]


@dataclass
class MatchingIndicator:
    page_id: int
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("indicator needs at least one counter")
        if (self.counts < 0).any():
            raise ValueError("indicator counts must be >= 0")

    @classmethod
    def empty(cls, page_id: int, T: int) -> "MatchingIndicator":
        return cls(page_id, np.zeros(T, dtype=np.int64))

    @property
    def T(self) -> int:
        return self.counts.size


def r_appeared(indicator) -> float:
    counts = indicator.counts if isinstance(indicator, MatchingIndicator) else np.asarray(indicator)
    if len(counts) < 1:
        raise ValueError("T must be >= 1")
    return int(np.count_nonzero(counts)) / len(counts)


def clear_indicator(indicator: MatchingIndicator, profile_or_counts) -> MatchingIndicator:
    """Subtract one visit's worth of appearances, clamping at zero (in place)."""
    per_visit = (profile_or_counts.per_visit_counts if isinstance(profile_or_counts, PageProfile)
                 else profile_or_counts)
    per_visit = np.asarray(per_visit, dtype=np.int64)
    if per_visit.shape != indicator.counts.shape:
        raise ValueError("per-visit counts do not match indicator length")
    np.maximum(indicator.counts - per_visit, 0, out=indicator.counts)
    return indicator


@dataclass
class BufferEntry:
    fv: Optional[PacketFeatureVector]
    arrival_time: float
    arrival_seq: int
    slot: int
    page_id: int
    uid: Optional[str] = None
    expiry: float = field(init=False)

    def __post_init__(self):
        self.expiry = self.arrival_time + BUFFER_TTL


@dataclass
class RecognitionEvent:
    page_id: int
    detection_time: float
    r_before: float
    contributing: list[BufferEntry]
    attributed: list[BufferEntry]
    n_slots: int

    @property
    def attributed_uids(self) -> list:
        return [e.uid for e in self.attributed]


def expire_buffer(buffer: list[BufferEntry], now: float,
                  indicator: Optional[MatchingIndicator] = None) -> list[BufferEntry]:
    """Drop entries whose timer ran out; each dropped entry takes one count with it."""
    kept = []
    for e in buffer:
        if e.expiry < now:
            if indicator is not None and indicator.counts[e.slot] > 0:
                indicator.counts[e.slot] -= 1
        else:
            kept.append(e)
    return kept


def _times(entries) -> np.ndarray:
    return np.array([e.arrival_time if isinstance(e, BufferEntry) else e for e in entries],
                    dtype=float)


def interval_filter(entries: Sequence, t: float) -> list:
    """Stage one: drop every entry farther than ``t`` from all other entries.

    Entries may be :class:`BufferEntry` objects or bare times. A lone entry
    has no other entry to compare against and is kept.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    if len(entries) <= 1:
        return list(entries)
    ts = _times(entries)
    gaps = np.abs(ts[:, None] - ts[None, :])
    np.fill_diagonal(gaps, np.inf)
    keep = (gaps <= t).any(axis=1)
    return [e for e, k in zip(entries, keep) if k]


def sequence_is_legal(entries: Sequence, t: float) -> bool:
    """Stage two: a candidate sequence is legal only if every pair lies within ``t``."""
    if t <= 0:
        raise ValueError("t must be > 0")
    if len(entries) <= 1:
        return True
    ts = _times(entries)
    return float(ts.max() - ts.min()) <= t


def candidate_sequences(entries: Sequence[BufferEntry], T: int, cap: int = CANDIDATE_CAP
                        ) -> tuple[list[tuple[BufferEntry, ...]], bool]:
    """One entry per slot, in lexicographic arrival order, at most ``cap`` of them.

    Each candidate is returned ordered by arrival. The flag reports whether
    the cap cut the enumeration short.
    """
    by_slot: list[list[BufferEntry]] = [[] for _ in range(T)]
    for e in entries:
        by_slot[e.slot].append(e)
    if any(not s for s in by_slot):
        return [], False
    for s in by_slot:
        s.sort(key=lambda e: e.arrival_seq)
    total = 1
    for s in by_slot:
        total *= len(s)
    out = [tuple(sorted(combo, key=lambda e: e.arrival_seq))
           for combo in itertools.islice(itertools.product(*by_slot), cap)]
    return out, total > cap


Scorer = Callable[[list[tuple[int, ...]]], np.ndarray]


def as_scorer(classifier) -> Scorer:
    if classifier is None:
        return lambda seqs: np.ones(len(seqs))
    if isinstance(classifier, LSTMParams):
        return lambda seqs: predict_proba(classifier, seqs)
    return classifier


def recognize_packets(entries: Sequence[BufferEntry], profile: PageProfile, classifier,
                      cap: int = CANDIDATE_CAP, threshold: float = LEGAL_THRESHOLD
                      ) -> list[BufferEntry]:
    """Entries belonging to some candidate sequence the classifier deems legal."""
    t = profile.interval_threshold_t
    survivors = interval_filter(list(entries), t)
    cands, capped = candidate_sequences(survivors, profile.T, cap)
    if capped:
        log.info("page %d: candidate enumeration capped at %d", profile.page_id, cap)
    cands = [c for c in cands if sequence_is_legal(c, t)]
    if not cands:
        return []
    probs = as_scorer(classifier)([tuple(e.slot for e in c) for c in cands])
    chosen: dict[int, BufferEntry] = {}
    for c, p in zip(cands, probs):
        if p >= threshold:
            for e in c:
                chosen[id(e)] = e
    return sorted(chosen.values(), key=lambda e: e.arrival_seq)


class RecognitionEngine:
    """Single-stream attacker state across all tracked pages."""

    def __init__(self, profiles: Sequence[PageProfile], classifiers: Optional[dict] = None, *,
                 cap: int = CANDIDATE_CAP, threshold: float = LEGAL_THRESHOLD):
        self.profiles = {p.page_id: p for p in profiles}
        self.classifiers = classifiers or {}
        self.cap = cap
        self.threshold = threshold
        self.indicators = {p.page_id: MatchingIndicator.empty(p.page_id, p.T) for p in profiles}
        self.buffers: dict[int, list[BufferEntry]] = {p.page_id: [] for p in profiles}
        self.events: list[RecognitionEvent] = []
        self._seq = 0
        self._index: dict[tuple, list[tuple[int, int]]] = defaultdict(list)
        for p in profiles:
            for pp in p.packets:
                self._index[pp.key].append((p.page_id, pp.index))

    def expire(self, now: float) -> None:
        for pid in self.buffers:
            if self.buffers[pid]:
                self.buffers[pid] = expire_buffer(self.buffers[pid], now, self.indicators[pid])

    def ingest(self, fv: PacketFeatureVector, time: float, uid: Optional[str] = None
               ) -> list[RecognitionEvent]:
        self.expire(time)
        seq = self._seq
        self._seq += 1
        fired = []
        for pid, slot in self._index.get(fv.discrete_key(), ()):
            profile = self.profiles[pid]
            pp = profile.packets[slot]
            if pp.topology and fv.topology and pp.topology != fv.topology:
                continue
            if not delays_in_range(fv.delays, pp.delay_ranges):
                continue
            ind = self.indicators[pid]
            r_before = r_appeared(ind)
            ind.counts[slot] += 1
            self.buffers[pid].append(BufferEntry(fv, time, seq, slot, pid, uid))
            if r_appeared(ind) == 1.0:
                fired.append(self._detect(pid, time, r_before))
        self.events.extend(fired)
        return fired

    def _detect(self, pid: int, time: float, r_before: float) -> RecognitionEvent:
        profile = self.profiles[pid]
        buf = self.buffers[pid]
        attributed = recognize_packets(buf, profile, self.classifiers.get(pid), self.cap,
                                       self.threshold)
        clear_indicator(self.indicators[pid], profile)
        # Consume one visit's worth of entries per slot, attributed ones first.
        picked = {id(e) for e in attributed}
        remove = set()
        for slot, pp in enumerate(profile.packets):
            in_slot = [e for e in buf if e.slot == slot]
            in_slot.sort(key=lambda e: (id(e) not in picked, e.arrival_seq))
            remove.update(id(e) for e in in_slot[:pp.per_visit_count])
        self.buffers[pid] = [e for e in buf if id(e) not in remove]
        return RecognitionEvent(pid, time, r_before, list(buf), attributed, profile.T)

    def consistent(self) -> bool:
        """Counters equal per-slot buffer occupancy for every page."""
        for pid, ind in self.indicators.items():
            occ = np.bincount([e.slot for e in self.buffers[pid]], minlength=ind.T)
            if not np.array_equal(occ, ind.counts):
                return False
        return True


def detections_csv(events: Sequence[RecognitionEvent]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(DETECTION_COLUMNS)
    for ev in events:
        w.writerow([repr(float(ev.detection_time)), ev.page_id, repr(float(ev.r_before)),
                    len(ev.attributed)])
    return out.getvalue()
