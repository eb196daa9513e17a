"""Fixed-size padding and batch delivery with in-enclave verification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional, Union

import numpy as np

log = logging.getLogger(__name__)


class PaddingPolicyError(ValueError):
    pass


@dataclass(frozen=True)
class MaxLen:
    max_bytes: int

    def __post_init__(self):
        if self.max_bytes < 1:
            raise PaddingPolicyError("max_bytes must be >= 1")


@dataclass(frozen=True)
class MultipleOf:
    x_bytes: int

    def __post_init__(self):
        if self.x_bytes < 1:
            raise PaddingPolicyError("x_bytes must be >= 1")


PaddingPolicy = Union[MaxLen, MultipleOf]


def pad_length(length: int, policy: Optional[PaddingPolicy]) -> int:
    """Padded plaintext length.

    ``MultipleOf(x)`` gives ``n * x`` for the least ``n`` with ``n * x > length``;
    the inequality is strict, so an exact multiple grows by a full block.
    """
    if policy is None:
        return length
    if length < 1:
        raise PaddingPolicyError("length must be >= 1")
    if isinstance(policy, MaxLen):
        if length > policy.max_bytes:
            raise PaddingPolicyError(f"length {length} exceeds MaxLen({policy.max_bytes})")
        return policy.max_bytes
    x = policy.x_bytes
    return (length // x + 1) * x


def padding_from_dict(d: Optional[dict]) -> Optional[PaddingPolicy]:
    if not d:
        return None
    mode = d.get("mode")
    if mode == "max_len":
        return MaxLen(int(d["max_bytes"]))
    if mode == "multiple_of":
        return MultipleOf(int(d["x_bytes"]))
    raise PaddingPolicyError(f"unknown padding mode {mode!r}")


def padding_to_dict(policy: Optional[PaddingPolicy]) -> Optional[dict]:
    if policy is None:
        return None
    if isinstance(policy, MaxLen):
        return {"mode": "max_len", "max_bytes": policy.max_bytes}
    return {"mode": "multiple_of", "x_bytes": policy.x_bytes}


@dataclass(frozen=True)
class BatchPolicy:
    threshold_n: int
    timeout: Optional[float] = None  # flush-on-timeout, seconds; off by default

    def __post_init__(self):
        if self.threshold_n < 1:
            raise ValueError("threshold_n must be >= 1")


@dataclass(frozen=True)
class BatchItem:
    payload: Any
    batch_id: int
    position: int
    dummy: bool = False


@dataclass(frozen=True)
class Batch:
    batch_id: int
    items: tuple[BatchItem, ...]

    def __len__(self):
        return len(self.items)

    @property
    def real(self) -> list:
        return [it.payload for it in self.items if not it.dummy]


class BatchGate:
    """Groups incoming items into tagged batches of exactly ``threshold_n``."""

    def __init__(self, policy: BatchPolicy, dummy_factory=lambda: None, first_batch_id: int = 0):
        self.policy = policy
        self._dummy = dummy_factory
        self._pending: list = []
        self._oldest: Optional[float] = None
        self._next_id = first_batch_id

    @property
    def pending(self) -> int:
        return len(self._pending)

    def _seal(self, payloads: list, n_dummies: int = 0) -> Batch:
        bid = self._next_id
        self._next_id += 1
        items = [BatchItem(p, bid, i) for i, p in enumerate(payloads)]
        items += [BatchItem(self._dummy(), bid, len(payloads) + j, dummy=True)
                  for j in range(n_dummies)]
        return Batch(bid, tuple(items))

    def push(self, payload, now: Optional[float] = None) -> list[Batch]:
        out = []
        if (self.policy.timeout is not None and self._oldest is not None and now is not None
                and now - self._oldest > self.policy.timeout):
            b = self.flush()
            if b is not None:
                out.append(b)
        if not self._pending:
            self._oldest = now
        self._pending.append(payload)
        if len(self._pending) >= self.policy.threshold_n:
            out.append(self._seal(self._pending))
            self._pending = []
            self._oldest = None
        return out

    def flush(self) -> Optional[Batch]:
        """Emit the held partial batch, topped up with flagged dummies."""
        if not self._pending:
            return None
        b = self._seal(self._pending, self.policy.threshold_n - len(self._pending))
        self._pending = []
        self._oldest = None
        return b


def batch_gate(incoming: Iterable, policy: BatchPolicy) -> Iterator[Batch]:
    gate = BatchGate(policy)
    for item in incoming:
        yield from gate.push(item)
    last = gate.flush()
    if last is not None:
        yield last


class BatchVerifier:
    """Enclave-side check: full batch, consistent tags, never-seen batch id."""

    def __init__(self, threshold_n: int):
        self.n = threshold_n
        self.seen: set[int] = set()

    def verify(self, batch: Batch) -> bool:
        ok = enclave_batch_verify(batch, self.n, self.seen)
        if ok:
            self.seen.add(batch.batch_id)
        return ok


def enclave_batch_verify(batch: Batch, threshold_n: int, seen_ids: Optional[set] = None) -> bool:
    if len(batch.items) != threshold_n:
        return False
    if seen_ids is not None and batch.batch_id in seen_ids:
        return False
    for pos, item in enumerate(batch.items):
        if item.batch_id != batch.batch_id or item.position != pos:
            return False
    return True


def release_order(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random within-batch output order."""
    return rng.permutation(n)
