"""Simulated SGX-assisted service-function chain: NAT, WAF, IDS and WAN optimizer.

Each VNF is an enclave with one processing ECALL and an OCALL table
``[deliver, write_log, reject]``. The per-VNF functions below are pure: they
return the processing delay and the OCALLs the enclave will make. A
:class:`ServiceChain` executes them against a virtual clock, routes the
packet, and (when a :class:`~sgxleak.collector.Collector` is attached) lets
the observer see every boundary crossing.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .collector import Collector, Marshalled, OcallTable, VirtualClock
from .countermeasures import (Batch, BatchGate, BatchPolicy, BatchVerifier, PaddingPolicy,
                              pad_length, release_order)
from .traffic import IMAGE, REQUEST, TEXT, PacketGroundTruth, cipher_len, stable_hash
from .trace import (ECALL_PROCESS, ECALL_PROCESS_BATCH, OCALL_DLV, OCALL_REJECT, OCALL_WRITE,
                    InterfaceEvent, PacketFeatureVector, VnfRecord)
from .trie import BinaryTrie

log = logging.getLogger(__name__)

# Benign payload bytes never include the rule "anchor" characters, so a rule
# can only match where it was deliberately embedded.
BENIGN_ALPHABET = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz0123456789 ./", dtype=np.uint8)
_WORD = b"abcdefghijklmnopqrstuvwxyz0123456789"
WAF_ANCHORS = b"=<>'();"
IDS_ANCHORS = b"%|{}[]"
SQLI_PATTERN = b"1=1"

TEXT_RATIO = (0.31, 0.60)
IMAGE_RATIO = (0.0, 0.05)


class ChainConfigError(ValueError):
    pass


class Role(str, enum.Enum):
    NAT = "NAT"
    WAF = "WAF"
    IDS = "IDS"
    WANOPT = "WANOPT"


@dataclass(frozen=True)
class ChainTopology:
    vnfs: tuple[tuple[int, Role], ...] = ((1, Role.NAT), (2, Role.WAF), (3, Role.IDS),
                                          (4, Role.WANOPT))
    request_path: tuple[Role, ...] = (Role.NAT, Role.WAF, Role.WANOPT)
    response_path: tuple[Role, ...] = (Role.WAF, Role.NAT)
    # Where the IDS hands a response packet: back onto the path ("nat") or
    # straight to the gateway ("gateway").
    ids_return: str = "nat"

    def __post_init__(self):
        roles = [Role(r) for _, r in self.vnfs]
        object.__setattr__(self, "vnfs", tuple((int(e), Role(r)) for e, r in self.vnfs))
        object.__setattr__(self, "request_path", tuple(Role(r) for r in self.request_path))
        object.__setattr__(self, "response_path", tuple(Role(r) for r in self.response_path))
        if sorted(roles) != sorted(Role):
            raise ChainConfigError(f"each role must appear exactly once, got {roles}")
        ids = [e for e, _ in self.vnfs]
        if len(set(ids)) != len(ids):
            raise ChainConfigError("duplicate enclave ids")
        for r in self.request_path + self.response_path:
            if r not in roles:
                raise ChainConfigError(f"path references unknown role {r}")
        if self.ids_return not in ("nat", "gateway"):
            raise ChainConfigError(f"ids_return must be 'nat' or 'gateway', got {self.ids_return!r}")

    def id_of(self, role: Role) -> int:
        for e, r in self.vnfs:
            if r == role:
                return e
        raise KeyError(role)

    @property
    def enclave_ids(self) -> tuple[int, ...]:
        return tuple(e for e, _ in self.vnfs)

    def expected_path(self, kind: str, suspicious: bool) -> tuple[int, ...]:
        """Enclave ids a packet traverses, as dictated by the WAF's routing branch."""
        base = self.request_path if kind == REQUEST else self.response_path
        out: list[Role] = []
        for i, role in enumerate(base):
            out.append(role)
            if role == Role.WAF and suspicious:
                out.append(Role.IDS)
                if kind != REQUEST and self.ids_return == "gateway":
                    break
        return tuple(self.id_of(r) for r in out)


def _word(rng, lo, hi) -> bytes:
    n = int(rng.integers(lo, hi + 1))
    return bytes(rng.choice(np.frombuffer(_WORD, np.uint8), size=n).tolist())


def _patterns(rng, count: int, anchors: bytes) -> list[bytes]:
    out, seen = [], set()
    while len(out) < count:
        anchor = bytes([anchors[int(rng.integers(len(anchors)))]])
        pat = _word(rng, 2, 6) + anchor + _word(rng, 1, 5)
        if pat not in seen:
            seen.add(pat)
            out.append(pat)
    return out


@dataclass
class RuleSet:
    waf_rules: list[bytes]
    ids_rules: list[bytes]
    nat_table: list[tuple[int, int, int]]

    def __post_init__(self):
        if not self.waf_rules or not self.ids_rules:
            raise ChainConfigError("rule lists must be non-empty")
        if not self.nat_table:
            raise ChainConfigError("NAT table must be non-empty")
        self.nat_trie = BinaryTrie(self.nat_table)  # validates prefixes
        self._waf_index = _RuleIndex(self.waf_rules)
        self._ids_index = _RuleIndex(self.ids_rules)


def generate_rules(seed: int, n_waf: int = 1000, n_ids: int = 3000, n_nat: int = 1000) -> RuleSet:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A]))
    waf = _patterns(rng, n_waf - 1, WAF_ANCHORS)
    waf.insert(int(rng.integers(0, n_waf)), SQLI_PATTERN)
    ids = _patterns(rng, n_ids, IDS_ANCHORS)
    table = [(0, 0, int(rng.integers(0, 2**32)))]
    for _ in range(n_nat - 1):
        length = int(rng.integers(8, 25))
        prefix = int(rng.integers(0, 2**32)) & (((1 << length) - 1) << (32 - length))
        table.append((prefix, length, int(rng.integers(0, 2**32))))
    return RuleSet(waf, ids, table)


class _RuleIndex:
    """Substring rule scanner with an exact anchor-byte prefilter."""

    def __init__(self, rules: Sequence[bytes]):
        self.rules = list(rules)
        self.first = np.array([r[0] for r in self.rules], dtype=np.intp)
        # Rarest-looking byte of each rule: a non-alphanumeric one when present.
        self.anchor = np.array([next((b for b in r if b not in _WORD), r[0]) for r in self.rules],
                               dtype=np.intp)

    def scan(self, payload: bytes, hist: np.ndarray) -> tuple[Optional[int], int, int]:
        """Return ``(first matching rule index, rules checked, first-byte hits)``."""
        match = None
        for i in np.flatnonzero(hist[self.anchor] > 0):
            if self.rules[i] in payload:
                match = int(i)
                break
        checked = len(self.rules) if match is None else match + 1
        hits = int(hist[self.first[:checked]].sum())
        return match, checked, hits


def server_address(page_id: int) -> int:
    return stable_hash("server", page_id) & 0xFFFFFFFF


def compression_ratio(page_id: int, object_id: int, content_class: str) -> float:
    """Per-object deterministic gzip ratio: text compresses well, images barely."""
    lo, hi = TEXT_RATIO if content_class == TEXT else IMAGE_RATIO
    u = stable_hash("ratio", page_id, object_id) / 2.0**64
    return lo + (hi - lo) * u


class ContentModel:
    """Materializes plaintext payloads consistent with a packet's ground-truth flags."""

    def __init__(self, rules: RuleSet):
        self.rules = rules
        self._cache: dict = {}

    def payload(self, packet: PacketGroundTruth) -> bytes:
        key = packet.content_key() + (packet.suspicious, packet.loggable)
        hit = self._cache.get(key)
        if hit is not None:
            return hit[0]
        data = self._make(packet, key)
        if packet.constant:
            self._cache[key] = (data, {})
        return data

    def _make(self, packet: PacketGroundTruth, key) -> bytes:
        n = packet.payload_bytes
        # The seed leaves out the length, so a longer payload of the same
        # object extends a shorter one and scan work grows with size.
        ident = packet.packet_uid if not packet.constant else None
        h = stable_hash("content", packet.page_id, packet.object_id, packet.kind, ident,
                        packet.suspicious, packet.loggable)
        rng = np.random.default_rng(h)
        buf = bytearray(rng.choice(BENIGN_ALPHABET, size=n).tobytes())
        if packet.suspicious:
            rule = SQLI_PATTERN if h % 2 == 0 else self.rules.waf_rules[h % len(self.rules.waf_rules)]
            if len(rule) > n // 2:
                rule = SQLI_PATTERN
            if len(rule) > n:
                raise ValueError(f"payload of {n} bytes cannot carry a suspicious pattern")
            span = max(1, n // 2 - len(rule) + 1)
            pos = (h >> 8) % span
            buf[pos:pos + len(rule)] = rule
            if packet.loggable:
                sig = self.rules.ids_rules[(h >> 16) % len(self.rules.ids_rules)]
                if n - n // 2 >= len(sig):
                    start = n // 2 + (h >> 24) % (n - n // 2 - len(sig) + 1)
                    buf[start:start + len(sig)] = sig
        return bytes(buf)

    def scan(self, packet: PacketGroundTruth, payload: bytes, which: str):
        key = packet.content_key() + (packet.suspicious, packet.loggable)
        cached = self._cache.get(key)
        memo = cached[1] if cached is not None else None
        if memo is not None and which in memo:
            return memo[which]
        hist = np.bincount(np.frombuffer(payload, dtype=np.uint8), minlength=256)
        index = self.rules._waf_index if which == "waf" else self.rules._ids_index
        result = index.scan(payload, hist)
        if memo is not None:
            memo[which] = result
        return result


@dataclass
class DelayModel:
    base_cycles: dict = field(default_factory=lambda: {"NAT": 1200, "WAF": 1500, "IDS": 2000,
                                                       "WANOPT": 1800})
    per_rule_cycles: int = 8
    per_hit_cycles: int = 3
    per_byte_cycles: int = 2
    per_bit_cycles: int = 20
    write_cycles: int = 900
    transit_cycles: int = 400
    verify_cycles: int = 60
    noise_amplitude: int = 0

    def __post_init__(self):
        self.base_cycles = {Role(k).value: int(v) for k, v in self.base_cycles.items()}
        for r in Role:
            self.base_cycles.setdefault(r.value, 0)
        values = list(self.base_cycles.values()) + [
            self.per_rule_cycles, self.per_hit_cycles, self.per_byte_cycles, self.per_bit_cycles,
            self.write_cycles, self.transit_cycles, self.verify_cycles, self.noise_amplitude]
        if any(v < 0 for v in values):
            raise ChainConfigError("delay coefficients must be >= 0")

    def base(self, role: Role) -> int:
        return self.base_cycles[Role(role).value]


@dataclass(frozen=True)
class InterfaceCall:
    direction: str          # "E" or "O"
    name: str
    param_bytes: int
    index: int = 0          # OCALL table index
    offset: int = 0         # cycles after the ECALL


@dataclass(frozen=True)
class VnfOutcome:
    delay_cycles: int
    calls: tuple[InterfaceCall, ...]
    out_bytes: int                  # plaintext bytes handed on
    route: Optional[Role] = None    # WAF only
    detail: dict = field(default_factory=dict, compare=False)

    @property
    def ocalls(self) -> tuple[InterfaceCall, ...]:
        return tuple(c for c in self.calls if c.direction == "O")


def _wire(n: int, padding: Optional[PaddingPolicy], overhead: int) -> int:
    return cipher_len(pad_length(n, padding) if padding is not None else n, overhead)


def _as_trie(nat_table) -> BinaryTrie:
    if isinstance(nat_table, BinaryTrie):
        return nat_table
    if isinstance(nat_table, RuleSet):
        return nat_table.nat_trie
    return BinaryTrie(nat_table)


def nat_process(packet: PacketGroundTruth, nat_table, delay_model: Optional[DelayModel] = None, *,
                noise: int = 0, padding: Optional[PaddingPolicy] = None,
                cipher_overhead: int = 29) -> VnfOutcome:
    dm = delay_model or DelayModel()
    trie = _as_trie(nat_table)
    translation, matched, bits = trie.lookup(server_address(packet.page_id))
    if matched < 0:
        raise ChainConfigError("NAT table has no default route")
    n = packet.payload_bytes
    plain = pad_length(n, padding) if padding is not None else n
    delay = max(0, dm.base(Role.NAT) + dm.per_bit_cycles * bits + dm.per_byte_cycles * plain + noise)
    wire = cipher_len(plain, cipher_overhead)
    calls = (InterfaceCall("E", "ECALL_NAT", wire),
             InterfaceCall("O", "OCALL_DLV", wire, OCALL_DLV, delay))
    return VnfOutcome(delay, calls, n, detail={"translation": translation, "bits": bits,
                                               "prefix_len": matched})


def waf_process(packet: PacketGroundTruth, waf_rules, delay_model: Optional[DelayModel] = None, *,
                content: Optional[ContentModel] = None, noise: int = 0,
                padding: Optional[PaddingPolicy] = None, cipher_overhead: int = 29) -> VnfOutcome:
    """Scan WAF rules in order until the first hit; any hit sends the packet to the IDS."""
    dm = delay_model or DelayModel()
    content = content or ContentModel(waf_rules if isinstance(waf_rules, RuleSet)
                                      else _adhoc_rules(waf=waf_rules))
    payload = content.payload(packet)
    match, checked, hits = content.scan(packet, payload, "waf")
    n = packet.payload_bytes
    plain = pad_length(n, padding) if padding is not None else n
    delay = max(0, dm.base(Role.WAF) + dm.per_rule_cycles * checked + dm.per_hit_cycles * hits
                + dm.per_byte_cycles * plain + noise)
    wire = cipher_len(plain, cipher_overhead)
    route = Role.IDS if match is not None else None
    calls = (InterfaceCall("E", "ECALL_WAF", wire),
             InterfaceCall("O", "OCALL_DLV", wire, OCALL_DLV, delay))
    return VnfOutcome(delay, calls, n, route=route,
                      detail={"match": match, "rules_checked": checked, "hits": hits})


def ids_process(packet: PacketGroundTruth, ids_rules, delay_model: Optional[DelayModel] = None, *,
                content: Optional[ContentModel] = None, noise: int = 0,
                padding: Optional[PaddingPolicy] = None, cipher_overhead: int = 29) -> VnfOutcome:
    """Deep inspection; a signature hit is logged to disk before delivery."""
    dm = delay_model or DelayModel()
    content = content or ContentModel(ids_rules if isinstance(ids_rules, RuleSet)
                                      else _adhoc_rules(ids=ids_rules))
    payload = content.payload(packet)
    match, checked, hits = content.scan(packet, payload, "ids")
    n = packet.payload_bytes
    plain = pad_length(n, padding) if padding is not None else n
    scan = max(0, dm.base(Role.IDS) + dm.per_rule_cycles * checked + dm.per_hit_cycles * hits
               + dm.per_byte_cycles * plain + noise)
    wire = cipher_len(plain, cipher_overhead)
    calls = [InterfaceCall("E", "ECALL_IDS", wire)]
    delay = scan
    if match is not None:
        calls.append(InterfaceCall("O", "OCALL_WRITE", 64, OCALL_WRITE, scan))
        delay += dm.write_cycles
    calls.append(InterfaceCall("O", "OCALL_DLV", wire, OCALL_DLV, delay))
    return VnfOutcome(delay, tuple(calls), n,
                      detail={"match": match, "rules_checked": checked, "hits": hits})


def wanopt_process(packet: PacketGroundTruth, delay_model: Optional[DelayModel] = None, *,
                   noise: int = 0, padding: Optional[PaddingPolicy] = None,
                   cipher_overhead: int = 29) -> VnfOutcome:
    dm = delay_model or DelayModel()
    n = packet.payload_bytes
    if n <= 0:
        raise ValueError("payload must be non-empty")
    r = compression_ratio(packet.page_id, packet.object_id, packet.content_class)
    out = max(1, math.ceil(n * (1.0 - r)))
    plain_in = pad_length(n, padding) if padding is not None else n
    plain_out = pad_length(out, padding) if padding is not None else out
    delay = max(0, dm.base(Role.WANOPT) + dm.per_byte_cycles * plain_in + noise)
    calls = (InterfaceCall("E", "ECALL_WANOPT", cipher_len(plain_in, cipher_overhead)),
             InterfaceCall("O", "OCALL_DLV", cipher_len(plain_out, cipher_overhead), OCALL_DLV,
                           delay))
    return VnfOutcome(delay, calls, out, detail={"ratio": r})


def _adhoc_rules(waf=None, ids=None) -> RuleSet:
    return RuleSet(list(waf or [SQLI_PATTERN]), list(ids or [b"x%y"]), [(0, 0, 0)])


@dataclass
class _Flight:
    """A packet travelling through the chain."""

    packet: PacketGroundTruth
    roles: list
    pos: int = 0
    size: int = 0
    hops: list = field(default_factory=list)

    @property
    def role(self) -> Optional[Role]:
        return self.roles[self.pos] if self.pos < len(self.roles) else None


@dataclass
class ObservedUnit:
    """Events the observer saw while one delivered packet was being handled."""

    time: float
    uid: str
    events: tuple[InterfaceEvent, ...]
    truth: Optional[PacketFeatureVector] = None


class VnfEnclave:
    def __init__(self, chain: "ServiceChain", enclave_id: int, role: Role):
        self.chain = chain
        self.enclave_id = enclave_id
        self.role = role
        self.original_table = OcallTable([chain._net_deliver, chain._disk_write, chain._reject_log])
        self.ocall_table = self.original_table
        if chain.collector is not None:
            self.attach(chain.collector)
        self.verifier = BatchVerifier(chain.batch.threshold_n) if chain.batch else None

    def attach(self, collector: Collector) -> None:
        self.ocall_table = collector.hijack_ocall_table(self.original_table, self.enclave_id)

    def compute(self, packet: PacketGroundTruth, noise: int) -> VnfOutcome:
        c = self.chain
        kw = dict(noise=noise, padding=c.padding, cipher_overhead=c.cipher_overhead)
        if self.role == Role.NAT:
            return nat_process(packet, c.rules.nat_trie, c.delay_model, **kw)
        if self.role == Role.WAF:
            return waf_process(packet, c.rules, c.delay_model, content=c.content, **kw)
        if self.role == Role.IDS:
            return ids_process(packet, c.rules, c.delay_model, content=c.content, **kw)
        return wanopt_process(packet, c.delay_model, **kw)

    def _replay(self, delay: int, ocalls: Sequence[InterfaceCall]) -> None:
        clock = self.chain.clock
        t0 = clock.now
        for call in ocalls:
            clock.advance_to(t0 + call.offset)
            self.ocall_table[call.index](Marshalled(call.param_bytes))
        clock.advance_to(t0 + delay)

    def ecall_process(self, packet: PacketGroundTruth, noise: int) -> VnfOutcome:
        outcome = self.compute(packet, noise)
        self._replay(outcome.delay_cycles, outcome.ocalls)
        return outcome

    def ecall_process_batch(self, batch: Batch, noises: Sequence[int]) -> Optional[list]:
        """Process a verified batch as one unit; returns outcomes or ``None`` if rejected."""
        c = self.chain
        if not self.verifier.verify(batch):
            self.ocall_table[OCALL_REJECT](Marshalled(0))
            return None
        outcomes = []
        ocalls = []
        elapsed = c.delay_model.verify_cycles * len(batch)
        out_wire = 0
        for flight, noise in zip(batch.real, noises):
            o = self.compute(_resized(flight), noise)
            outcomes.append(o)
            for call in o.ocalls:
                if call.index == OCALL_WRITE:
                    ocalls.append(InterfaceCall("O", "OCALL_WRITE", call.param_bytes, OCALL_WRITE,
                                                elapsed + call.offset))
                elif call.index == OCALL_DLV:
                    out_wire += call.param_bytes
            elapsed += o.delay_cycles
        out_wire += c.dummy_wire * (len(batch) - len(batch.real))
        ocalls.append(InterfaceCall("O", "OCALL_DLV", out_wire, OCALL_DLV, elapsed))
        self._replay(elapsed, ocalls)
        return outcomes


def _resized(flight: _Flight) -> PacketGroundTruth:
    p = flight.packet
    if flight.size == p.payload_bytes:
        return p
    return PacketGroundTruth(p.packet_uid, p.page_id, p.object_id, p.kind, flight.size,
                             p.content_class, p.suspicious, p.loggable, p.constant,
                             p.arrival_time, p.dummy)


class ServiceChain:
    """One chain instance; processes one packet (or one batch per VNF) at a time."""

    def __init__(self, topology: Optional[ChainTopology] = None, rules: Optional[RuleSet] = None,
                 delay_model: Optional[DelayModel] = None, *, padding: Optional[PaddingPolicy] = None,
                 batch: Optional[BatchPolicy] = None, collector: Optional[Collector] = None,
                 noise_seed: int = 0, cipher_overhead: int = 29):
        self.topology = topology or ChainTopology()
        self.rules = rules or generate_rules(0)
        self.delay_model = delay_model or DelayModel()
        self.padding = padding
        self.batch = batch
        self.collector = collector
        self.cipher_overhead = cipher_overhead
        self.clock = collector.clock if collector is not None else VirtualClock()
        self.content = ContentModel(self.rules)
        self._noise_rng = np.random.default_rng(np.random.SeedSequence([noise_seed, 0xD1]))
        self._order_rng = np.random.default_rng(np.random.SeedSequence([noise_seed, 0x0D]))
        self.delivered: list = []
        self.disk_log: list = []
        self.rejected = 0
        self.packets_processed = 0
        self.enclaves = {role: VnfEnclave(self, eid, role) for eid, role in self.topology.vnfs}
        dummy_plain = pad_length(1, padding) if padding is not None else 1
        self.dummy_wire = cipher_len(dummy_plain, cipher_overhead)

    def attach_collector(self, collector: Collector) -> None:
        """Interpose ``collector`` on every ECALL and OCALL from now on; it takes over the clock."""
        collector.clock.advance_to(max(collector.clock.now, self.clock.now))
        self.collector = collector
        self.clock = collector.clock
        for enc in self.enclaves.values():
            enc.attach(collector)

    # untrusted side of the OCALL table
    def _net_deliver(self, ms: Marshalled):
        self.delivered.append(ms.size)
        return 0

    def _disk_write(self, ms: Marshalled):
        self.disk_log.append(ms.size)
        return 0

    def _reject_log(self, ms: Marshalled):
        self.rejected += 1
        return 0

    @property
    def wanopt_id(self) -> int:
        return self.topology.id_of(Role.WANOPT)

    def _noise(self) -> int:
        u = self._noise_rng.uniform(-1.0, 1.0)  # drawn even when A = 0 to keep streams aligned
        return int(round(self.delay_model.noise_amplitude * u))

    def _enter(self, enclave: VnfEnclave, call_id: int, wire: int, body: Callable):
        if self.collector is None:
            return body()
        return self.collector.hook_ecall(enclave.enclave_id, call_id, wire, body)

    def _new_flight(self, packet: PacketGroundTruth) -> _Flight:
        base = self.topology.request_path if packet.kind == REQUEST else self.topology.response_path
        return _Flight(packet, list(base), 0, packet.payload_bytes)

    def _advance_route(self, flight: _Flight, outcome: VnfOutcome) -> None:
        role = flight.role
        if role == Role.WAF and outcome.route == Role.IDS:
            flight.roles.insert(flight.pos + 1, Role.IDS)
        if (role == Role.IDS and flight.packet.kind != REQUEST
                and self.topology.ids_return == "gateway"):
            del flight.roles[flight.pos + 1:]
        flight.size = outcome.out_bytes
        flight.pos += 1

    def process(self, packet: PacketGroundTruth) -> PacketFeatureVector:
        """Drive one packet along its path; returns the ground-truth feature vector."""
        if self.batch is not None:
            raise RuntimeError("batched chains process streams; use run_stream")
        flight = self._new_flight(packet)
        while flight.role is not None:
            enclave = self.enclaves[flight.role]
            p = _resized(flight)
            noise = self._noise()
            wire = _wire(p.payload_bytes, self.padding, self.cipher_overhead)
            outcome = self._enter(enclave, ECALL_PROCESS, wire,
                                  lambda: enclave.ecall_process(p, noise))
            dlv = [c for c in outcome.ocalls if c.index == OCALL_DLV][-1]
            flight.hops.append(VnfRecord(enclave.enclave_id, wire, dlv.param_bytes,
                                         outcome.delay_cycles,
                                         tuple(c.index for c in outcome.ocalls)))
            self._advance_route(flight, outcome)
            self.clock.advance(self.delay_model.transit_cycles)
        self.packets_processed += 1
        return PacketFeatureVector(tuple(flight.hops), self.topology.enclave_ids, self.wanopt_id)

    def run_stream(self, packets) -> list[ObservedUnit]:
        """Replay packets in order, one delivery at a time, collecting per-delivery events."""
        col = self.collector
        units = []
        if self.batch is None:
            for p in packets:
                mark = col.mark() if col else 0
                fv = self.process(p)
                events = tuple(col.since(mark)) if col else ()
                units.append(ObservedUnit(p.arrival_time, p.packet_uid, events, fv))
            return units
        return self._run_batched(packets)

    def _run_batched(self, packets) -> list[ObservedUnit]:
        col = self.collector
        order = [r for r in (Role.NAT, Role.WAF, Role.IDS, Role.WANOPT)]
        gates = {r: BatchGate(self.batch, dummy_factory=lambda: None,
                              first_batch_id=i * 10**9) for i, r in enumerate(order)}
        work: deque = deque()

        def enqueue(flight: _Flight, now):
            role = flight.role
            if role is None:
                self.packets_processed += 1
                return
            for b in gates[role].push(flight, now):
                work.append((role, b))

        def drain():
            while work:
                role, b = work.popleft()
                for flight in self._run_batch(role, b):
                    enqueue(flight, None)

        units = []
        last_time = 0.0
        for p in packets:
            mark = col.mark() if col else 0
            enqueue(self._new_flight(p), p.arrival_time)
            drain()
            last_time = p.arrival_time
            units.append(ObservedUnit(p.arrival_time, p.packet_uid,
                                      tuple(col.since(mark)) if col else ()))
        mark = col.mark() if col else 0
        while any(g.pending for g in gates.values()):
            for role in order:
                b = gates[role].flush()
                if b is not None:
                    work.append((role, b))
                    drain()
        units.append(ObservedUnit(last_time, "flush", tuple(col.since(mark)) if col else ()))
        return units

    def _run_batch(self, role: Role, batch: Batch) -> list[_Flight]:
        enclave = self.enclaves[role]
        flights = batch.real
        noises = [self._noise() for _ in flights]
        wire = sum(_wire(f.size, self.padding, self.cipher_overhead) for f in flights)
        wire += self.dummy_wire * (len(batch) - len(flights))
        outcomes = self._enter(enclave, ECALL_PROCESS_BATCH, wire,
                               lambda: enclave.ecall_process_batch(batch, noises))
        self.clock.advance(self.delay_model.transit_cycles)
        if outcomes is None:
            return []
        for f, o in zip(flights, outcomes):
            self._advance_route(f, o)
        perm = release_order(len(flights), self._order_rng)
        return [flights[i] for i in perm]
