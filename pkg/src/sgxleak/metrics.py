"""Page- and packet-level scoring plus padding bandwidth overhead."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

from .countermeasures import PaddingPolicy, pad_length
from .traffic import Corpus, PacketGroundTruth, cipher_len, reference_packets


@dataclass(frozen=True)
class Score:
    accuracy: float
    recall: float
    n_correct: int
    n_identified: int
    n_tracked: int
    accuracy_undefined: bool = False
    recall_undefined: bool = False


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def visit_of_uid(uid: str) -> int:
    return int(uid.split("-", 1)[0][1:])


def page_metrics(detections: Sequence, tracked_visits: Mapping[int, int],
                 uid_visit=visit_of_uid) -> Score:
    """Score page detections against ground-truth visits.

    ``tracked_visits`` maps visit id to page id for every visit of a tracked
    page in the stream. A detection of page W is accurate when some visit of W
    that no earlier detection claimed supplies an entry for every profiled
    slot among the detection's contributing entries; that visit is then
    credited, so one visit backs at most one accurate detection.
    """
    credited: set[int] = set()
    correct = 0
    for det in detections:
        slots_by_visit: dict[int, set[int]] = {}
        for e in det.contributing:
            if e.uid is None:
                continue
            v = uid_visit(e.uid)
            if tracked_visits.get(v) == det.page_id and v not in credited:
                slots_by_visit.setdefault(v, set()).add(e.slot)
        full = [v for v, s in slots_by_visit.items() if len(s) == det.n_slots]
        if full:
            credited.add(min(full))
            correct += 1
    acc, acc_u = _ratio(correct, len(detections))
    rec, rec_u = _ratio(correct, len(tracked_visits))
    return Score(acc, rec, correct, len(detections), len(tracked_visits), acc_u, rec_u)


def packet_metrics(detections: Sequence, truth_page: Mapping[str, int], n_tracked: int) -> Score:
    """Attributed packets are scored as distinct (detected page, uid) pairs.

    An attribution is accurate when the packet truly came from the detected
    page. ``n_tracked`` is the number of packets belonging to tracked visits.
    """
    pairs = set()
    for det in detections:
        for uid in det.attributed_uids:
            pairs.add((det.page_id, uid))
    correct = sum(1 for pid, uid in pairs if truth_page.get(uid) == pid)
    acc, acc_u = _ratio(correct, len(pairs))
    rec, rec_u = _ratio(correct, n_tracked)
    return Score(acc, min(rec, 1.0), correct, len(pairs), n_tracked, acc_u, rec_u)


def bandwidth_overhead(source: Union[Corpus, Iterable[PacketGroundTruth], Iterable[int]],
                       policy: Optional[PaddingPolicy], cipher_overhead: int = 29) -> float:
    """Relative growth of total ciphertext bytes when every packet is padded.

    ``source`` is a corpus (one rendering per page), packets, or bare
    plaintext lengths.
    """
    if isinstance(source, Corpus):
        lengths = [p.payload_bytes for p in reference_packets(source)]
    else:
        lengths = [p.payload_bytes if isinstance(p, PacketGroundTruth) else int(p)
                   for p in source]
    base = sum(cipher_len(n, cipher_overhead) for n in lengths)
    if base == 0:
        return 0.0
    padded = sum(cipher_len(pad_length(n, policy), cipher_overhead) for n in lengths)
    return (padded - base) / base
