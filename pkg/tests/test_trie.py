import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgxleak.trie import BinaryTrie, linear_lpm


def random_table(rng, n):
    table = [(0, 0, 7)]
    for _ in range(n):
        length = int(rng.integers(1, 33))
        prefix = int(rng.integers(0, 2**32)) & (((1 << length) - 1) << (32 - length))
        table.append((prefix, length, int(rng.integers(0, 1000))))
    return table


def test_hand_example():
    t = BinaryTrie([(0, 0, "default"), (0x0A000000, 8, "ten"), (0x0A010000, 16, "ten-one")])
    assert t.lookup(0x0A010203)[:2] == ("ten-one", 16)
    assert t.lookup(0x0A020203)[:2] == ("ten", 8)
    assert t.lookup(0x0B000000)[:2] == ("default", 0)
    assert BinaryTrie([(0x80000000, 1, "x")]).lookup(0)[:2] == (None, -1)


def test_bits_visited_counts_walked_edges():
    t = BinaryTrie([(0, 0, 0), (0xC0000000, 2, 1)])
    assert t.lookup(0xC0000000)[2] == 2
    assert t.lookup(0x40000000)[2] == 0


def test_rejects_bad_prefixes():
    with pytest.raises(ValueError):
        BinaryTrie([(0x0A000001, 8, 0)])
    with pytest.raises(ValueError):
        BinaryTrie([(0, 33, 0)])


def test_matches_linear_scan_on_1000_lookups():
    rng = np.random.default_rng(3)
    table = random_table(rng, 1000)
    trie = BinaryTrie(table)
    for addr in rng.integers(0, 2**32, size=1000):
        v, n, _ = trie.lookup(int(addr))
        assert (v, n) == linear_lpm(table, int(addr))


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_equivalence_property(seed, n, addr):
    table = random_table(np.random.default_rng(seed), n)
    v, length, _ = BinaryTrie(table).lookup(addr)
    assert (v, length) == linear_lpm(table, addr)
