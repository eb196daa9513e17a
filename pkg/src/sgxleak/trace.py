"""Interface events, per-packet feature vectors and the text trace format.

A trace file looks like::

    ISCTRACE 1
    0,100,1,E,0,528,-
    1,2740,1,O,0,528,0

Columns are ``seq,cycle,enclave_id,dir,call_id,param_bytes,aux`` with ``dir``
one of ``E`` (ECALL) or ``O`` (OCALL) and ``aux`` set to ``-`` when absent.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

TRACE_HEADER = "ISCTRACE 1"

# OCALL table layout shared by every VNF enclave.
OCALL_DLV = 0
OCALL_WRITE = 1
OCALL_REJECT = 2

# ECALL interface of a VNF enclave.
ECALL_PROCESS = 0
ECALL_PROCESS_BATCH = 1


class TraceError(Exception):
    pass


class TraceParseError(TraceError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class TraceValidationError(TraceError):
    pass


class TraceIOError(TraceError):
    def __init__(self, position: int, cause: BaseException):
        super().__init__(f"write failed at byte {position}: {cause}")
        self.position = position


class TopologyMismatchError(ValueError):
    pass


class Direction(str, enum.Enum):
    ECALL = "E"
    OCALL = "O"


@dataclass(frozen=True)
class InterfaceEvent:
    seq_no: int
    cycle: int
    enclave_id: int
    direction: Direction
    call_id: int
    param_bytes: int
    aux: Optional[int] = None

    def to_line(self) -> str:
        aux = "-" if self.aux is None else str(self.aux)
        return (f"{self.seq_no},{self.cycle},{self.enclave_id},{self.direction.value},"
                f"{self.call_id},{self.param_bytes},{aux}")


def validate_events(events: Sequence[InterfaceEvent]) -> None:
    prev: Optional[InterfaceEvent] = None
    for ev in events:
        if ev.param_bytes < 0:
            raise TraceValidationError(f"event {ev.seq_no}: negative param_bytes {ev.param_bytes}")
        if prev is not None:
            if ev.seq_no <= prev.seq_no:
                raise TraceValidationError(
                    f"seq_no not strictly increasing: {prev.seq_no} then {ev.seq_no}")
            if ev.cycle < prev.cycle:
                raise TraceValidationError(
                    f"cycle decreases at seq {ev.seq_no}: {prev.cycle} then {ev.cycle}")
        prev = ev


def write_trace(events: Iterable[InterfaceEvent], destination: IO) -> int:
    """Write ``events`` to a text or binary sink and return the number of bytes written."""
    events = list(events)
    validate_events(events)
    binary = not isinstance(destination, io.TextIOBase)
    position = 0
    for line in [TRACE_HEADER] + [ev.to_line() for ev in events]:
        data = line + "\n"
        try:
            destination.write(data.encode("utf-8") if binary else data)
        except OSError as exc:
            raise TraceIOError(position, exc) from exc
        position += len(data.encode("utf-8"))
    return position


def trace_bytes(events: Iterable[InterfaceEvent]) -> bytes:
    buf = io.BytesIO()
    write_trace(events, buf)
    return buf.getvalue()


def _parse_int(text: str, line: int, column: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise TraceParseError(line, column, f"bad {what} {text!r}") from None


def read_trace(source) -> list[InterfaceEvent]:
    """Parse a trace from a byte/text stream, ``bytes`` or ``str``."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != TRACE_HEADER:
        raise TraceParseError(1, 1, f"expected header {TRACE_HEADER!r}")

    events = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 7:
            raise TraceParseError(lineno, 1, f"expected 7 fields, got {len(fields)}")
        cols = []
        col = 1
        for f in fields:
            cols.append(col)
            col += len(f) + 1
        seq = _parse_int(fields[0], lineno, cols[0], "seq")
        cycle = _parse_int(fields[1], lineno, cols[1], "cycle")
        enclave = _parse_int(fields[2], lineno, cols[2], "enclave_id")
        if fields[3] not in ("E", "O"):
            raise TraceParseError(lineno, cols[3], f"bad direction {fields[3]!r}")
        call_id = _parse_int(fields[4], lineno, cols[4], "call_id")
        param = _parse_int(fields[5], lineno, cols[5], "param_bytes")
        aux = None if fields[6] == "-" else _parse_int(fields[6], lineno, cols[6], "aux")
        events.append(InterfaceEvent(seq, cycle, enclave, Direction(fields[3]), call_id, param, aux))
    validate_events(events)
    return events


@dataclass(frozen=True)
class VnfRecord:
    """What one VNF exposes for one packet."""

    enclave_id: int
    param_bytes_in: int
    param_bytes_out: int
    delay_cycles: int
    ocall_indices: tuple[int, ...] = (OCALL_DLV,)

    def discrete(self) -> tuple:
        return (self.enclave_id, self.param_bytes_in, self.param_bytes_out, self.ocall_indices)


@dataclass(frozen=True)
class PacketFeatureVector:
    hops: tuple[VnfRecord, ...]
    topology: tuple[int, ...] = ()
    wanopt_id: Optional[int] = None

    @property
    def chain_path(self) -> tuple[int, ...]:
        return tuple(h.enclave_id for h in self.hops)

    @property
    def delays(self) -> tuple[int, ...]:
        return tuple(h.delay_cycles for h in self.hops)

    @property
    def size_change_ratio(self) -> Optional[float]:
        for h in self.hops:
            if h.enclave_id == self.wanopt_id and h.param_bytes_in:
                return (h.param_bytes_out - h.param_bytes_in) / h.param_bytes_in
        return None

    def discrete_key(self) -> tuple:
        # The size-change ratio is a function of the WAN-OPT in/out byte counts
        # already in the key, so exact byte equality covers it.
        return tuple(h.discrete() for h in self.hops)


@dataclass(frozen=True)
class ProfiledPacket:
    index: int
    key: tuple
    delay_ranges: tuple[tuple[int, int], ...]
    per_visit_count: int = 1
    topology: tuple[int, ...] = ()

    def __post_init__(self):
        if self.per_visit_count < 1:
            raise ValueError("per_visit_count must be >= 1")
        for lo, hi in self.delay_ranges:
            if lo > hi:
                raise ValueError(f"empty delay range [{lo}, {hi}]")

    @property
    def chain_path(self) -> tuple[int, ...]:
        return tuple(k[0] for k in self.key)

    @property
    def min_width(self) -> int:
        return min(hi - lo for lo, hi in self.delay_ranges)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "key": [[e, i, o, list(oc)] for e, i, o, oc in self.key],
            "delay_ranges": [list(r) for r in self.delay_ranges],
            "per_visit_count": self.per_visit_count,
            "topology": list(self.topology),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfiledPacket":
        return cls(
            index=d["index"],
            key=tuple((e, i, o, tuple(oc)) for e, i, o, oc in d["key"]),
            delay_ranges=tuple((lo, hi) for lo, hi in d["delay_ranges"]),
            per_visit_count=d["per_visit_count"],
            topology=tuple(d["topology"]),
        )


def delays_in_range(delays: Sequence[int], ranges: Sequence[tuple[int, int]]) -> bool:
    return len(delays) == len(ranges) and all(lo <= d <= hi for d, (lo, hi) in zip(delays, ranges))


def features_match(candidate: PacketFeatureVector, profiled: ProfiledPacket) -> bool:
    """Exact match on discrete features, closed-interval match on per-VNF delays."""
    if candidate.topology != profiled.topology:
        raise TopologyMismatchError(f"{candidate.topology} != {profiled.topology}")
    if candidate.discrete_key() != profiled.key:
        return False
    return delays_in_range(candidate.delays, profiled.delay_ranges)


def extract_feature_vector(events: Sequence[InterfaceEvent], topology: tuple[int, ...] = (),
                           wanopt_id: Optional[int] = None) -> PacketFeatureVector:
    """Rebuild a packet's feature vector from the events observed while it was in flight.

    Each ECALL opens a hop; OCALLs up to the next ECALL belong to it and the
    delivery OCALL closes it (delay = delivery stamp minus ECALL stamp).
    """
    hops = []
    cur: Optional[dict] = None

    def close():
        if cur is not None:
            hops.append(VnfRecord(cur["enclave"], cur["in"], cur["out"], cur["delay"],
                                  tuple(cur["ocalls"])))

    for ev in events:
        if ev.direction is Direction.ECALL:
            close()
            cur = {"enclave": ev.enclave_id, "in": ev.param_bytes, "out": 0,
                   "delay": 0, "start": ev.cycle, "ocalls": []}
        elif cur is not None and ev.enclave_id == cur["enclave"]:
            index = ev.aux if ev.aux is not None else ev.call_id
            cur["ocalls"].append(index)
            if index == OCALL_DLV:
                cur["out"] = ev.param_bytes
                cur["delay"] = ev.cycle - cur["start"]
    close()
    return PacketFeatureVector(tuple(hops), tuple(topology), wanopt_id)


@dataclass(frozen=True)
class Trace:
    """A finalized, immutable event sequence."""

    events: tuple[InterfaceEvent, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def to_bytes(self) -> bytes:
        return trace_bytes(self.events)
