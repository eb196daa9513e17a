import logging
from collections import Counter

import pytest

from sgxleak.enclave import ServiceChain
from sgxleak.profiling import (PageProfile, UntrackablePageError, VisitObservation, build_profile,
                               collect_visits, dump_profiles, extract_constant_packets,
                               load_profiles, profile_page)
from sgxleak.trace import PacketFeatureVector, VnfRecord, features_match
from sgxleak.traffic import CorpusParams, ObjectSpec, WebPageSpec, generate_corpus

TOPO = (1, 2, 3, 4)


def fv(size, delay=1000):
    return PacketFeatureVector((VnfRecord(2, size, size, delay),), TOPO, 4)


def visit(sizes, times=None):
    times = times if times is not None else [0.01 * i for i in range(len(sizes))]
    return VisitObservation([fv(s) for s in sizes], list(times))


def test_all_constant_page_gives_identical_multisets(small_rules):
    c = generate_corpus(4, 5, CorpusParams(dynamic_fraction=0.0))
    visits = collect_visits(c.pages[0], ServiceChain(rules=small_rules), 2, seed=1,
                            params=c.params)
    keys = [Counter(f.discrete_key() for f in v.features) for v in visits]
    assert keys[0] == keys[1]


def test_collect_visits_requires_two():
    with pytest.raises(ValueError):
        collect_visits(generate_corpus(1, 1).pages[0], ServiceChain(), 1)


@pytest.fixture(scope="module")
def mixed_page():
    objs = (ObjectSpec(0, 300, (400, 900), "text", offset=0.0),
            ObjectSpec(1, 350, (700,), "image", offset=0.3),
            ObjectSpec(2, 420, (1200, 250), "text", offset=0.6),
            ObjectSpec(3, 500, (800, 820), "image", constant=False, offset=0.2),
            ObjectSpec(4, 510, (300,), "text", constant=False, offset=0.9))
    return WebPageSpec(0, objs, 0.4)


@pytest.fixture(scope="module")
def mixed_visits(mixed_page, small_rules):
    return collect_visits(mixed_page, ServiceChain(rules=small_rules), 20, seed=5)


def test_noiseless_ranges_have_zero_width(mixed_visits):
    packets = extract_constant_packets(mixed_visits)
    assert all(lo == hi for p in packets for lo, hi in p.delay_ranges)


def test_exactly_the_constant_packets_are_retained(mixed_visits):
    packets = extract_constant_packets(mixed_visits)
    first = mixed_visits[0]
    constant_keys = {f.discrete_key() for f, p in zip(first.features, first.packets) if p.constant}
    assert {p.key for p in packets} == constant_keys
    # requests are always constant; only the two dynamic objects' segments drop out
    assert len(packets) == 5 + 5


def test_duplicated_single_visit_keeps_everything():
    v = visit([200, 300, 300, 400])
    packets = extract_constant_packets([v, v])
    assert [p.per_visit_count for p in packets] == [1, 2, 1]
    assert all(p.min_width == 0 for p in packets)


def test_per_visit_counts_worked_example():
    sizes = [141, 157, 141, 173, 157, 173, 189]
    packets = extract_constant_packets([visit(sizes), visit(sizes[::-1])])
    assert [p.per_visit_count for p in packets] == [2, 2, 2, 1]


def test_inconsistent_counts_warn_and_take_minimum(caplog):
    with caplog.at_level(logging.DEBUG, logger="sgxleak.profiling"):
        packets = extract_constant_packets([visit([141, 141, 157]), visit([141, 157])])
    assert [p.per_visit_count for p in packets] == [1, 1]
    assert "differ" in caplog.text


def test_interval_threshold_is_max_gap():
    vs = [visit([141, 157], [1.0, 1.1]), visit([141, 157], [2.0, 2.5]),
          visit([141, 157], [3.0, 3.3])]
    assert build_profile(0, vs).interval_threshold_t == pytest.approx(0.5)


def test_simultaneous_packets_use_minimum_interval():
    vs = [visit([141, 157], [1.0, 1.0]), visit([141, 157], [2.0, 2.0])]
    assert build_profile(0, vs).interval_threshold_t == 0.05


def test_exemplars_one_per_visit():
    vs = [visit([141, 157, 173]), visit([157, 141, 173]), visit([141, 173, 157])]
    prof = build_profile(3, vs)
    assert prof.k == 3
    assert prof.exemplar_sequences == [(0, 1, 2), (1, 0, 2), (0, 2, 1)]


def test_no_common_packets_is_untrackable():
    with pytest.raises(UntrackablePageError):
        build_profile(0, [visit([141]), visit([157])])


def test_profile_invariants_checked():
    pk = extract_constant_packets([visit([141]), visit([141])])
    with pytest.raises(ValueError):
        PageProfile(0, pk, 0.0, [(0,)])
    with pytest.raises(ValueError):
        PageProfile(0, pk, 1.0, [(1,)])
    with pytest.raises(ValueError):
        PageProfile(0, pk, 1.0, [])


def test_self_match_and_threshold_bound(corpus, small_rules):
    for pid in corpus.tracked_ids[:5]:
        from sgxleak.enclave import DelayModel
        chain = ServiceChain(rules=small_rules, delay_model=DelayModel(noise_amplitude=30),
                             noise_seed=pid)
        visits = collect_visits(corpus.page(pid), chain, 20, seed=pid, params=corpus.params)
        prof = build_profile(pid, visits)
        for v in visits:
            matched = [(f, t) for f, t in zip(v.features, v.times)
                       if any(features_match(f, p) for p in prof.packets)]
            constant = [f for f, p in zip(v.features, v.packets) if p.constant]
            assert all(any(features_match(f, p) for p in prof.packets) for f in constant)
            times = [t for _, t in matched]
            assert max(times) - min(times) <= prof.interval_threshold_t + 1e-12


def test_profiles_text_roundtrip(mixed_visits):
    prof = build_profile(0, mixed_visits)
    text = dump_profiles([prof])
    assert text.startswith("ISCPROF 1\n")
    back = load_profiles(text)[0]
    assert back.packets == prof.packets
    assert back.exemplar_sequences == prof.exemplar_sequences
    assert back.interval_threshold_t == prof.interval_threshold_t
    with pytest.raises(ValueError):
        load_profiles("ISCPROF 0\n[]")


def test_profile_page_wrapper(mixed_page, small_rules):
    prof = profile_page(mixed_page, ServiceChain(rules=small_rules), 3, seed=1)
    assert prof.T == 10 and prof.k == 3
