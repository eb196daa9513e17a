"""Binary trie for longest-prefix match on 32-bit addresses."""

from __future__ import annotations

from typing import Any, Iterable, Optional

ADDRESS_BITS = 32


class _Node:
    __slots__ = ("children", "value", "has_value")

    def __init__(self):
        self.children = [None, None]
        self.value = None
        self.has_value = False


def _check_prefix(prefix: int, length: int) -> None:
    if not 0 <= length <= ADDRESS_BITS:
        raise ValueError(f"prefix length {length} out of range")
    if not 0 <= prefix < 2 ** ADDRESS_BITS:
        raise ValueError(f"prefix {prefix:#x} out of range")
    if length < ADDRESS_BITS and prefix & ((1 << (ADDRESS_BITS - length)) - 1):
        raise ValueError(f"prefix {prefix:#x}/{length} has host bits set")


class BinaryTrie:
    def __init__(self, entries: Iterable[tuple[int, int, Any]] = ()):
        self.root = _Node()
        self.size = 0
        for prefix, length, value in entries:
            self.insert(prefix, length, value)

    def insert(self, prefix: int, length: int, value: Any) -> None:
        _check_prefix(prefix, length)
        node = self.root
        for i in range(length):
            bit = (prefix >> (ADDRESS_BITS - 1 - i)) & 1
            if node.children[bit] is None:
                node.children[bit] = _Node()
            node = node.children[bit]
        if not node.has_value:
            self.size += 1
        node.value = value
        node.has_value = True

    def lookup(self, address: int) -> tuple[Optional[Any], int, int]:
        """Return ``(value, matched_length, bits_visited)``.

        ``bits_visited`` counts the edges walked before the search fell off
        the trie; it drives the NAT's address-dependent lookup cost.
        """
        node = self.root
        best, best_len = (node.value, 0) if node.has_value else (None, -1)
        depth = 0
        while depth < ADDRESS_BITS:
            bit = (address >> (ADDRESS_BITS - 1 - depth)) & 1
            nxt = node.children[bit]
            if nxt is None:
                break
            node = nxt
            depth += 1
            if node.has_value:
                best, best_len = node.value, depth
        return best, best_len, depth


def linear_lpm(entries: Iterable[tuple[int, int, Any]], address: int) -> tuple[Optional[Any], int]:
    """Reference longest-prefix match by scanning every entry; later duplicates win."""
    best, best_len = None, -1
    for prefix, length, value in entries:
        mask = 0 if length == 0 else ((1 << length) - 1) << (ADDRESS_BITS - length)
        if address & mask == prefix and length >= best_len:
            best, best_len = value, length
    return best, best_len
