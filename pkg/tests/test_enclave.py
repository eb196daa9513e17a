import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgxleak.collector import Collector
from sgxleak.countermeasures import BatchPolicy, MaxLen
from sgxleak.enclave import (ChainConfigError, ChainTopology, DelayModel, RuleSet, ServiceChain,
                             compression_ratio, generate_rules, server_address, ids_process, nat_process,
                             wanopt_process, waf_process)
from sgxleak.trace import (ECALL_PROCESS_BATCH, OCALL_DLV, OCALL_WRITE, Direction,
                           extract_feature_vector, trace_bytes)
from sgxleak.traffic import cipher_len, generate_corpus, interleave_sessions, make_visit_plan
from sgxleak.trie import linear_lpm

from conftest import make_packet

NAT, WAF, IDS, WANOPT = 1, 2, 3, 4


def test_topology_validation():
    with pytest.raises(ChainConfigError):
        ChainTopology(vnfs=((1, "NAT"), (2, "WAF"), (3, "IDS")))
    with pytest.raises(ChainConfigError):
        ChainTopology(vnfs=((1, "NAT"), (1, "WAF"), (3, "IDS"), (4, "WANOPT")))
    with pytest.raises(ChainConfigError):
        ChainTopology(ids_return="elsewhere")


def test_rules_shape(small_rules):
    assert len(small_rules.waf_rules) == 200 and b"1=1" in small_rules.waf_rules
    assert len(small_rules.ids_rules) == 300
    assert (0, 0) == small_rules.nat_table[0][:2]
    with pytest.raises(ChainConfigError):
        RuleSet([], [b"x"], [(0, 0, 0)])


def test_default_route_only_table():
    out = nat_process(make_packet(), [(0, 0, 42)])
    assert out.detail["translation"] == 42 and out.detail["bits"] == 0


def test_missing_default_route_is_config_error():
    table = [(0x80000000, 1, 1)]
    addr_page = next(p for p in range(100) if linear_lpm(table, server_address(p))[0] is None)
    with pytest.raises(ChainConfigError):
        nat_process(make_packet(page=addr_page), table)


def test_nat_is_deterministic_and_emits_ecall_then_dlv(small_rules):
    a = nat_process(make_packet(n=300), small_rules)
    b = nat_process(make_packet(uid="v9-9", n=300), small_rules)
    assert a.delay_cycles == b.delay_cycles
    assert [c.name for c in a.calls] == ["ECALL_NAT", "OCALL_DLV"]
    assert a.calls[0].param_bytes == cipher_len(300)


def test_waf_routes_suspicious_to_ids(small_rules):
    sus = waf_process(make_packet(suspicious=True), small_rules)
    ben = waf_process(make_packet(), small_rules)
    assert sus.route is not None and sus.route.value == "IDS"
    assert ben.route is None
    assert ben.detail["rules_checked"] == 200
    again = waf_process(make_packet(), small_rules)
    assert again == ben


def test_ids_write_only_when_loggable(small_rules):
    logged = ids_process(make_packet(suspicious=True, loggable=True), small_rules)
    quiet = ids_process(make_packet(suspicious=True), small_rules)
    assert [c.index for c in logged.ocalls].count(OCALL_WRITE) == 1
    assert [c.index for c in logged.ocalls][-1] == OCALL_DLV
    assert OCALL_WRITE not in [c.index for c in quiet.ocalls]


def test_ids_delay_grows_with_rule_count():
    p = make_packet(suspicious=True)
    few = ids_process(p, generate_rules(5, n_ids=1000, n_waf=10, n_nat=5))
    many = ids_process(p, generate_rules(5, n_ids=5000, n_waf=10, n_nat=5))
    assert many.delay_cycles > few.delay_cycles


def test_wanopt_size_model():
    t = wanopt_process(make_packet(n=1000, cls="text"))
    i = wanopt_process(make_packet(n=1000, cls="image"))
    assert t.out_bytes <= 700 and i.out_bytes >= 950
    assert wanopt_process(make_packet(n=1000, cls="text")).out_bytes == t.out_bytes
    assert t.calls[1].param_bytes == cipher_len(t.out_bytes)


@settings(max_examples=200)
@given(st.integers(0, 10**6), st.integers(0, 50), st.integers(101, 1460))
def test_compression_classes_are_separated(page, obj, n):
    for cls, ok in (("text", lambda r: r >= 0.30), ("image", lambda r: r <= 0.05)):
        out = wanopt_process(make_packet(page=page, obj=obj, n=n, cls=cls)).out_bytes
        assert ok(1 - out / n)


@given(st.integers(101, 1400), st.integers(1, 60), st.sampled_from(["text", "image"]))
def test_delay_monotone_in_size(n, extra, cls):
    rules = generate_rules(2, n_waf=50, n_ids=50, n_nat=50)
    small, big = make_packet(n=n, cls=cls), make_packet(n=n + extra, cls=cls)
    assert nat_process(big, rules).delay_cycles > nat_process(small, rules).delay_cycles
    assert waf_process(big, rules).delay_cycles >= waf_process(small, rules).delay_cycles
    assert ids_process(big, rules).delay_cycles >= ids_process(small, rules).delay_cycles
    assert wanopt_process(big).delay_cycles > wanopt_process(small).delay_cycles


def test_chain_paths_follow_routing(rules):
    c = generate_corpus(9, 60)
    s = interleave_sessions(c, make_visit_plan([p.page_id for p in c.pages], 1), 2)
    col = Collector()
    chain = ServiceChain(rules=rules, collector=col)
    units = chain.run_stream(s.packets)
    for u, p in zip(units, s.packets):
        fv = extract_feature_vector(u.events, chain.topology.enclave_ids, chain.wanopt_id)
        assert fv == u.truth
        assert fv.chain_path == chain.topology.expected_path(p.kind, p.suspicious)
        for h in fv.hops:
            if h.enclave_id != WANOPT:
                assert h.param_bytes_in == cipher_len(p.payload_bytes)


def test_response_path_orders(rules):
    sus = make_packet(suspicious=True)
    ben = make_packet()
    col = Collector()
    chain = ServiceChain(rules=rules, collector=col)
    chain.process(sus)
    ecalls = [e.enclave_id for e in col.events if e.direction is Direction.ECALL]
    assert ecalls == [WAF, IDS, NAT]
    m = col.mark()
    chain.process(ben)
    assert [e.enclave_id for e in col.since(m) if e.direction is Direction.ECALL] == [WAF, NAT]
    gw = ServiceChain(ChainTopology(ids_return="gateway"), rules)
    assert gw.process(sus).chain_path == (WAF, IDS)


def _trace(rules, packets, **kw):
    col = Collector()
    ServiceChain(rules=rules, collector=col, **kw).run_stream(packets)
    return trace_bytes(col.events)


def test_chain_runs_are_byte_identical(small_rules, corpus):
    s = interleave_sessions(corpus, make_visit_plan([0, 1, 2, 3], 2), 2)
    assert _trace(small_rules, s.packets) == _trace(small_rules, s.packets)
    b = BatchPolicy(4)
    assert _trace(small_rules, s.packets, batch=b) == _trace(small_rules, s.packets, batch=b)


def test_batched_chain_hides_per_packet_calls(small_rules, corpus):
    s = interleave_sessions(corpus, make_visit_plan([0, 1], 2), 2)
    col = Collector()
    chain = ServiceChain(rules=small_rules, collector=col, batch=BatchPolicy(8),
                         padding=MaxLen(1460))
    chain.run_stream(s.packets)
    ecalls = [e for e in col.events if e.direction is Direction.ECALL]
    assert ecalls and all(e.call_id == ECALL_PROCESS_BATCH for e in ecalls)
    assert chain.packets_processed == len(s)
    assert chain.rejected == 0
    # every batch carries exactly n padded records
    assert {e.param_bytes for e in ecalls} == {8 * cipher_len(1460)}


def test_noise_is_bounded(small_rules):
    p = make_packet()
    base = ServiceChain(rules=small_rules).process(p).delays
    noisy = ServiceChain(rules=small_rules, delay_model=DelayModel(noise_amplitude=40),
                         noise_seed=3).process(p).delays
    assert all(abs(a - b) <= 40 for a, b in zip(base, noisy))
