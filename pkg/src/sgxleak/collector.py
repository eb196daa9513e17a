"""The untrusted-OS observer.

ECALLs are seen through an explicit dispatch hook (standing in for a shadowed
``sgx_ecall``); OCALLs are seen by swapping an enclave's OCALL table for one
whose entries are recording trampolines. Cycle stamps come from a virtual
clock shared with the simulated chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .trace import Direction, InterfaceEvent, Trace

log = logging.getLogger(__name__)

CHANNELS = frozenset({"sequence", "param_size", "delay"})


class CollectorStateError(RuntimeError):
    pass


class VirtualClock:
    """Monotone cycle counter advanced by the simulated enclaves."""

    def __init__(self, start: int = 0):
        self.now = int(start)

    def advance(self, cycles: int) -> int:
        if cycles < 0:
            raise ValueError("clock cannot run backwards")
        self.now += int(cycles)
        return self.now

    def advance_to(self, cycle: int) -> int:
        self.now = max(self.now, int(cycle))
        return self.now


@dataclass(frozen=True)
class Marshalled:
    """The ``ms`` parameter struct passed across the enclave boundary."""

    size: int
    data: Any = None


@dataclass
class CollectorConfig:
    noise_amplitude: int = 0
    cycle_per_instruction_scale: float = 1.0
    enabled_channels: frozenset = CHANNELS
    seed: int = 0

    def __post_init__(self):
        self.enabled_channels = frozenset(self.enabled_channels)
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")
        if self.cycle_per_instruction_scale <= 0:
            raise ValueError("cycle_per_instruction_scale must be > 0")
        unknown = self.enabled_channels - CHANNELS
        if unknown:
            raise ValueError(f"unknown channels {sorted(unknown)}")


class OcallTable:
    """Dense, fixed-length table of untrusted functions; index is the OCALL id."""

    def __init__(self, entries: Sequence[Callable]):
        self._entries = tuple(entries)

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, index: int) -> Callable:
        return self._entries[index]

    @property
    def entries(self) -> tuple[Callable, ...]:
        return self._entries


def read_cycles(config: CollectorConfig, clock: VirtualClock, rng=None, u: Optional[float] = None) -> int:
    """RDTSC stand-in: scaled clock value plus uniform noise in [-A, +A]."""
    base = clock.now
    if config.cycle_per_instruction_scale != 1.0:
        base = int(round(base * config.cycle_per_instruction_scale))
    a = config.noise_amplitude
    if a == 0:
        return base
    if u is None:
        u = rng.uniform(-1.0, 1.0)
    return base + int(round(a * u))


class Collector:
    def __init__(self, config: Optional[CollectorConfig] = None, clock: Optional[VirtualClock] = None):
        self.config = config or CollectorConfig()
        self.clock = clock or VirtualClock()
        self._rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 0x5C]))
        self._events: list[InterfaceEvent] = []
        self._last_stamp = 0
        self._finalized = False

    @property
    def events(self) -> list[InterfaceEvent]:
        return self._events

    def mark(self) -> int:
        return len(self._events)

    def since(self, mark: int) -> list[InterfaceEvent]:
        return self._events[mark:]

    def read_cycles(self) -> int:
        u = self._rng.uniform(-1.0, 1.0)  # drawn even when A = 0 to keep streams aligned
        stamp = read_cycles(self.config, self.clock, u=u)
        # A noisy stamp may not precede the previous one; the trace stays monotone.
        stamp = max(stamp, self._last_stamp)
        self._last_stamp = stamp
        return stamp

    def _emit(self, enclave_id: int, direction: Direction, call_id: int, param_bytes: int,
              aux: Optional[int]) -> InterfaceEvent:
        if self._finalized:
            raise CollectorStateError("trace already finalized")
        cycle = self.read_cycles()
        ch = self.config.enabled_channels
        if "sequence" not in ch:
            enclave_id, call_id, aux = 0, 0, None
        if "param_size" not in ch:
            param_bytes = 0
        if "delay" not in ch:
            cycle = 0
        ev = InterfaceEvent(len(self._events), cycle, enclave_id, direction, call_id,
                            int(param_bytes), aux)
        self._events.append(ev)
        return ev

    def hook_ecall(self, enclave_id: int, call_id: int, param_bytes: int,
                   inner: Callable[[], Any]) -> Any:
        """Record the ECALL with a pre-entry stamp, then enter the enclave."""
        self._emit(enclave_id, Direction.ECALL, call_id, param_bytes, None)
        return inner()

    def hijack_ocall_table(self, table: OcallTable, enclave_id: int = 0) -> OcallTable:
        def trampoline(index: int, original: Callable) -> Callable:
            def rcd_fun(*args, **kwargs):
                ms = args[0] if args else None
                size = getattr(ms, "size", 0) or 0
                self._emit(enclave_id, Direction.OCALL, index, size, index)
                return original(*args, **kwargs)
            return rcd_fun

        return OcallTable([trampoline(i, f) for i, f in enumerate(table.entries)])

    def finalize(self) -> Trace:
        self._finalized = True
        return Trace(tuple(self._events))


def delay_of(trace, ecall_event: InterfaceEvent, matching_ocall_event: InterfaceEvent) -> int:
    """Cycles between an ECALL and a later OCALL of the same trace."""
    events = trace.events if isinstance(trace, Trace) else trace
    if ecall_event not in events or matching_ocall_event not in events:
        raise ValueError("events must belong to the trace")
    if matching_ocall_event.seq_no < ecall_event.seq_no:
        raise ValueError("OCALL precedes ECALL")
    return matching_ocall_event.cycle - ecall_event.cycle
