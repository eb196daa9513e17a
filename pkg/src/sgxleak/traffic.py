"""Synthetic web-page corpora, page visits and the gateway ciphertext-size model."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

TEXT = "text"
IMAGE = "image"
REQUEST = "request"
RESPONSE = "response-segment"

SESSION_COLUMNS = ["packet_uid", "page_id", "object_id", "kind", "bytes", "class",
                   "suspicious", "loggable", "constant", "arrival_time"]


class CorpusConfigError(ValueError):
    pass


def stable_hash(*parts) -> int:
    """64-bit hash that does not depend on PYTHONHASHSEED."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def cipher_len(plaintext_bytes: int, overhead: int = 29) -> int:
    """Ciphertext length of a TLS record carrying ``plaintext_bytes`` (16-byte blocks)."""
    if plaintext_bytes < 0:
        raise ValueError("plaintext length must be >= 0")
    return 16 * (-(-plaintext_bytes // 16)) + overhead


@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    request_bytes: int
    response_segments: tuple[int, ...]
    content_class: str = TEXT
    suspicious: bool = False
    loggable: bool = False
    constant: bool = True
    offset: float = 0.0

    def __post_init__(self):
        if any(s <= 100 for s in self.response_segments):
            raise CorpusConfigError(f"object {self.object_id}: segment sizes must exceed 100 bytes")
        if self.request_bytes <= 0:
            raise CorpusConfigError(f"object {self.object_id}: empty request")


@dataclass(frozen=True)
class WebPageSpec:
    page_id: int
    objects: tuple[ObjectSpec, ...]
    dynamic_fraction: float = 0.3

    def __post_init__(self):
        if not any(o.constant for o in self.objects):
            raise CorpusConfigError(f"page {self.page_id} has no constant object")


@dataclass
class CorpusParams:
    min_objects: int = 3
    max_objects: int = 8
    min_segments: int = 1
    max_segments: int = 4
    min_request: int = 150
    max_request: int = 900
    min_segment: int = 101
    max_segment: int = 1460
    text_fraction: float = 0.5
    dynamic_fraction: float = 0.3
    suspicious_prob: float = 0.05
    loggable_prob: float = 0.10
    render_window: float = 2.0
    object_jitter: float = 0.2
    segment_gap: float = 0.02
    tracked_fraction: float = 0.5

    def validate(self) -> None:
        if self.max_segment <= 100 or self.min_segment <= 100:
            raise CorpusConfigError("segment sizes must exceed 100 bytes")
        if self.min_segment > self.max_segment or self.min_request > self.max_request:
            raise CorpusConfigError("min size above max size")
        if not (1 <= self.min_objects <= self.max_objects):
            raise CorpusConfigError("bad object count range")
        if not (1 <= self.min_segments <= self.max_segments):
            raise CorpusConfigError("bad segment count range")
        for name in ("text_fraction", "dynamic_fraction", "suspicious_prob", "loggable_prob",
                     "tracked_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CorpusConfigError(f"{name} must lie in [0, 1], got {v}")
        slack = self.render_window - self.object_jitter - self.max_segments * self.segment_gap
        if slack <= 0:
            raise CorpusConfigError("render window too short for jitter and segment gaps")


@dataclass
class Corpus:
    seed: int
    pages: list[WebPageSpec]
    tracked_ids: list[int]
    params: CorpusParams = field(default_factory=CorpusParams)

    def __post_init__(self):
        ids = [p.page_id for p in self.pages]
        if len(set(ids)) != len(ids):
            raise CorpusConfigError("duplicate page ids")
        missing = set(self.tracked_ids) - set(ids)
        if missing:
            raise CorpusConfigError(f"tracked ids not in corpus: {sorted(missing)}")
        self._by_id = {p.page_id: p for p in self.pages}

    def page(self, page_id: int) -> WebPageSpec:
        try:
            return self._by_id[page_id]
        except KeyError:
            raise LookupError(f"unknown page_id {page_id}") from None

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "params": asdict(self.params),
            "pages": [
                {"page_id": p.page_id, "dynamic_fraction": p.dynamic_fraction,
                 "objects": [dict(asdict(o), response_segments=list(o.response_segments))
                             for o in p.objects]}
                for p in self.pages
            ],
            "tracked_ids": list(self.tracked_ids),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Corpus":
        doc = json.loads(text)
        pages = [
            WebPageSpec(p["page_id"],
                        tuple(ObjectSpec(**dict(o, response_segments=tuple(o["response_segments"])))
                              for o in p["objects"]),
                        p["dynamic_fraction"])
            for p in doc["pages"]
        ]
        return cls(doc["seed"], pages, list(doc["tracked_ids"]), CorpusParams(**doc.get("params", {})))


def generate_corpus(seed: int, n_pages: int, params: Optional[CorpusParams] = None) -> Corpus:
    params = params or CorpusParams()
    params.validate()
    if n_pages < 1:
        raise CorpusConfigError("n_pages must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    pages = []
    for page_id in range(n_pages):
        n_obj = int(rng.integers(params.min_objects, params.max_objects + 1))
        n_dyn = min(int(math.floor(params.dynamic_fraction * n_obj + 1e-9)), n_obj - 1)
        dynamic = set(rng.choice(n_obj, size=n_dyn, replace=False).tolist()) if n_dyn else set()
        latest = (params.render_window - params.object_jitter
                  - params.max_segments * params.segment_gap)
        offsets = np.sort(rng.uniform(0.0, latest, size=n_obj))
        objects = []
        for oid in range(n_obj):
            n_seg = int(rng.integers(params.min_segments, params.max_segments + 1))
            segs = rng.integers(params.min_segment, params.max_segment + 1, size=n_seg)
            suspicious = bool(rng.random() < params.suspicious_prob)
            loggable = bool(rng.random() < params.loggable_prob)
            objects.append(ObjectSpec(
                object_id=oid,
                request_bytes=int(rng.integers(params.min_request, params.max_request + 1)),
                response_segments=tuple(int(s) for s in segs),
                content_class=TEXT if rng.random() < params.text_fraction else IMAGE,
                suspicious=suspicious,
                loggable=loggable,
                constant=oid not in dynamic,
                offset=round(float(offsets[oid]), 6),
            ))
        pages.append(WebPageSpec(page_id, tuple(objects), params.dynamic_fraction))
    n_tracked = max(1, int(round(params.tracked_fraction * n_pages))) if params.tracked_fraction else 0
    tracked = sorted(rng.choice(n_pages, size=n_tracked, replace=False).tolist()) if n_tracked else []
    return Corpus(seed, pages, [int(t) for t in tracked], params)


@dataclass(frozen=True)
class PacketGroundTruth:
    packet_uid: str
    page_id: int
    object_id: int
    kind: str
    payload_bytes: int
    content_class: str
    suspicious: bool
    loggable: bool
    constant: bool
    arrival_time: float
    dummy: bool = False

    @property
    def visit_id(self) -> int:
        return int(self.packet_uid.split("-", 1)[0][1:])

    def content_key(self) -> tuple:
        """Identity of the plaintext bytes: stable for constant packets, per-visit otherwise."""
        if self.constant:
            return (self.page_id, self.object_id, self.kind, self.payload_bytes)
        return ("dyn", self.packet_uid, self.payload_bytes)


def render_visit(page: WebPageSpec, visit_seed: int, start_time: float, *,
                 visit_id: int = 0, params: Optional[CorpusParams] = None) -> list[PacketGroundTruth]:
    """Packets produced by one visit of ``page``, sorted by arrival time."""
    params = params or CorpusParams()
    rng = np.random.default_rng(np.random.SeedSequence([visit_seed & (2**63 - 1), page.page_id]))
    raw = []
    for obj in page.objects:
        base = obj.offset + rng.uniform(0.0, params.object_jitter)
        raw.append((base, obj, REQUEST, obj.request_bytes, True))
        for j, size in enumerate(obj.response_segments):
            if not obj.constant:
                size = int(rng.integers(params.min_segment, params.max_segment + 1))
            t = base + (j + 1) * params.segment_gap + rng.uniform(0.0, 0.1 * params.segment_gap)
            raw.append((t, obj, RESPONSE, size, obj.constant))
    raw.sort(key=lambda r: r[0])
    packets = []
    for k, (t, obj, kind, size, constant) in enumerate(raw):
        offset = min(t, params.render_window)
        packets.append(PacketGroundTruth(
            packet_uid=f"v{visit_id}-{k}",
            page_id=page.page_id,
            object_id=obj.object_id,
            kind=kind,
            payload_bytes=int(size),
            content_class=obj.content_class,
            suspicious=obj.suspicious,
            loggable=obj.loggable,
            constant=constant,
            arrival_time=round(start_time + offset, 6),
        ))
    return packets


@dataclass
class SessionStream:
    packets: list[PacketGroundTruth]

    def __len__(self):
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SESSION_COLUMNS)
        for p in self.packets:
            w.writerow([p.packet_uid, p.page_id, p.object_id, p.kind, p.payload_bytes,
                        p.content_class, int(p.suspicious), int(p.loggable), int(p.constant),
                        repr(p.arrival_time)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SessionStream":
        rows = csv.DictReader(io.StringIO(text))
        packets = [PacketGroundTruth(
            packet_uid=r["packet_uid"], page_id=int(r["page_id"]), object_id=int(r["object_id"]),
            kind=r["kind"], payload_bytes=int(r["bytes"]), content_class=r["class"],
            suspicious=r["suspicious"] == "1", loggable=r["loggable"] == "1",
            constant=r["constant"] == "1", arrival_time=float(r["arrival_time"]))
            for r in rows]
        return cls(packets)


def interleave_sessions(corpus: Corpus, visit_plan: Sequence[tuple[int, float]],
                        seed: int) -> SessionStream:
    """Render every planned visit and merge them into one time-ordered stream.

    Visit ``i`` of the plan gets ``visit_id = i``; ties in arrival time keep plan order.
    """
    merged = []
    for visit_id, (page_id, start) in enumerate(visit_plan):
        page = corpus.page(page_id)
        vseed = stable_hash("visit", seed, visit_id)
        for k, p in enumerate(render_visit(page, vseed, start, visit_id=visit_id,
                                           params=corpus.params)):
            merged.append((p.arrival_time, visit_id, k, p))
    merged.sort(key=lambda r: r[:3])
    return SessionStream([r[3] for r in merged])


def make_visit_plan(page_ids: Sequence[int], seed: int, *, rounds: int = 2, span: float = 20.0,
                    round_gap: float = 45.0) -> list[tuple[int, float]]:
    """Visit every page once per round; starts are spread uniformly over ``span`` seconds.

    Rounds are separated by ``span + round_gap`` seconds so that the attack's
    30 s buffer drains between rounds.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x91]))
    plan = []
    for r in range(rounds):
        origin = r * (span + round_gap)
        order = rng.permutation(len(page_ids))
        starts = rng.uniform(0.0, span, size=len(page_ids))
        for i, s in zip(order, starts):
            plan.append((int(page_ids[i]), round(origin + float(s), 6)))
    plan.sort(key=lambda v: v[1])
    return plan


def reference_packets(corpus: Corpus, pages: Optional[Iterable[int]] = None) -> list[PacketGroundTruth]:
    """One rendering of each page, used for corpus-level size statistics."""
    ids = list(pages) if pages is not None else [p.page_id for p in corpus.pages]
    out = []
    for i, pid in enumerate(ids):
        out.extend(render_visit(corpus.page(pid), stable_hash("ref", corpus.seed, pid), 0.0,
                                visit_id=i, params=corpus.params))
    return out
