"""Secondary index holding nothing but TIDs.

Entries are kept in ``(value(tid), tid)`` order, where the value is resolved
through the storage layer on every comparison. The structure is a two-level
B-tree: a list of sorted leaves, each an ``array('Q')`` of TIDs. With leaves
of a few hundred entries the per-entry footprint stays close to the 8 bytes
of the TID itself.
"""

from __future__ import annotations

import bisect
import sys
from array import array
from typing import Any, Callable, Iterable, Iterator, Optional

import numpy as np

LEAF_MAX = 512
LEAF_FILL = 384
_TID_MAX = 2**64 - 1


class IndexEntryError(KeyError):
    """Duplicate insert or delete of an absent TID."""


def prefix_successor(prefix: bytes) -> Optional[bytes]:
    """Smallest byte string greater than every string starting with ``prefix``.

    Increments the last byte, dropping trailing 0xFF bytes (carry). Returns
    None when no such bound exists (the prefix is all 0xFF).
    """
    trimmed = prefix.rstrip(b"\xff")
    if not trimmed:
        return None
    return trimmed[:-1] + bytes([trimmed[-1] + 1])


class TidIndex:
    def __init__(self, resolve: Callable[[int], Any], convert: Optional[Callable[[Any], Any]] = None):
        self._resolve = resolve
        self._convert = convert or (lambda v: v)
        self._leaves: list[array] = []
        self._size = 0
        self.resolutions = 0

    # -- construction ---------------------------------------------------

    @classmethod
    def bulk(
        cls,
        resolve: Callable[[int], Any],
        tids: Iterable[int],
        values: Optional[np.ndarray] = None,
        convert: Optional[Callable[[Any], Any]] = None,
    ) -> "TidIndex":
        """Build from existing tuples; ``values`` (aligned with ``tids``) avoids resolution."""
        idx = cls(resolve, convert)
        tids = np.asarray(list(tids) if not isinstance(tids, np.ndarray) else tids, dtype=np.uint64)
        if values is None:
            order = sorted(range(len(tids)), key=lambda i: (resolve(int(tids[i])), int(tids[i])))
            ordered = tids[np.asarray(order, dtype=np.int64)] if len(order) else tids
        else:
            # tids may arrive unordered; sort by TID first so the stable value
            # sort leaves equal values in TID order
            by_tid = np.argsort(tids, kind="stable")
            tids, values = tids[by_tid], np.asarray(values)[by_tid]
            ordered = tids[np.argsort(values, kind="stable")]
        for s in range(0, len(ordered), LEAF_FILL):
            idx._leaves.append(array("Q", ordered[s:s + LEAF_FILL].tolist()))
        idx._size = len(ordered)
        return idx

    # -- internals ------------------------------------------------------

    def _key(self, tid: int):
        self.resolutions += 1
        return (self._resolve(tid), tid)

    def _leaf_for(self, key) -> int:
        leaves = self._leaves
        lo, hi = 0, len(leaves)
        while lo < hi:
            mid = (lo + hi) // 2
            if key < self._key(leaves[mid][0]):
                hi = mid
            else:
                lo = mid + 1
        return max(lo - 1, 0)

    def _lower(self, key) -> tuple[int, int]:
        """Position of the first entry >= ``key``."""
        if not self._leaves:
            return 0, 0
        li = self._leaf_for(key)
        leaf = self._leaves[li]
        pos = bisect.bisect_left(leaf, key, key=self._key)
        if pos == len(leaf) and li + 1 < len(self._leaves):
            return li + 1, 0
        return li, pos

    def _slice(self, start: tuple[int, int], stop: tuple[int, int]) -> list[int]:
        (l0, p0), (l1, p1) = start, stop
        if (l0, p0) >= (l1, p1):
            return []
        if l0 == l1:
            return self._leaves[l0][p0:p1].tolist()
        out = self._leaves[l0][p0:].tolist()
        for li in range(l0 + 1, l1):
            out.extend(self._leaves[li])
        if l1 < len(self._leaves):
            out.extend(self._leaves[l1][:p1])
        return out

    def _end(self) -> tuple[int, int]:
        if not self._leaves:
            return 0, 0
        return len(self._leaves) - 1, len(self._leaves[-1])

    # -- mutation -------------------------------------------------------

    def insert(self, tid: int) -> None:
        tid = int(tid)
        if not self._leaves:
            self._leaves.append(array("Q", [tid]))
            self._size = 1
            return
        key = self._key(tid)
        li = self._leaf_for(key)
        leaf = self._leaves[li]
        pos = bisect.bisect_left(leaf, key, key=self._key)
        if pos < len(leaf) and leaf[pos] == tid:
            raise IndexEntryError(f"TID {tid} already indexed")
        leaf.insert(pos, tid)
        self._size += 1
        if len(leaf) > LEAF_MAX:
            half = len(leaf) // 2
            self._leaves[li:li + 1] = [leaf[:half], leaf[half:]]

    def delete(self, tid: int) -> None:
        """Remove ``tid``; its stored value must not have changed since insertion."""
        tid = int(tid)
        if self._leaves:
            key = self._key(tid)
            li = self._leaf_for(key)
            leaf = self._leaves[li]
            pos = bisect.bisect_left(leaf, key, key=self._key)
            if pos < len(leaf) and leaf[pos] == tid:
                del leaf[pos]
                self._size -= 1
                if not leaf:
                    del self._leaves[li]
                return
        raise IndexEntryError(f"TID {tid} not indexed")

    # -- lookups --------------------------------------------------------

    def __len__(self) -> int:
        return self._size

    def __iter__(self) -> Iterator[int]:
        for leaf in self._leaves:
            yield from leaf

    def __contains__(self, tid: int) -> bool:
        if not self._leaves:
            return False
        try:
            key = self._key(int(tid))
        except (IndexError, KeyError):
            return False
        li, pos = self._lower(key)
        leaf = self._leaves[li]
        return pos < len(leaf) and leaf[pos] == tid

    def range_lookup(self, low, high) -> list[int]:
        """TIDs with ``low <= value <= high``, in (value, TID) order; ``None`` is unbounded."""
        if not self._leaves:
            return []
        low = None if low is None else self._convert(low)
        high = None if high is None else self._convert(high)
        if low is not None and high is not None and high < low:
            return []
        start = (0, 0) if low is None else self._lower((low, -1))
        stop = self._end() if high is None else self._upper_of(high)
        return self._slice(start, stop)

    def _upper_of(self, high) -> tuple[int, int]:
        li, pos = self._lower((high, _TID_MAX + 1))
        return li, pos

    def prefix_lookup(self, prefix) -> list[int]:
        prefix = self._convert(prefix)
        if not prefix:
            raise ValueError("prefix must be non-empty")
        succ = prefix_successor(prefix)
        stop = self._end() if succ is None else self._lower((succ, -1))
        return self._slice(self._lower((prefix, -1)), stop)

    def eq_lookup(self, value) -> list[int]:
        value = self._convert(value)
        return self._slice(self._lower((value, -1)), self._upper_of(value))

    # -- accounting -----------------------------------------------------

    def nbytes(self) -> int:
        return sys.getsizeof(self._leaves) + sum(sys.getsizeof(leaf) for leaf in self._leaves)

    def memory_report(self) -> float:
        """Bytes per entry."""
        if not self._size:
            raise ValueError("memory report needs at least one entry")
        return self.nbytes() / self._size

    def check(self) -> None:
        """Assert the strict (value, TID) order."""
        prev = None
        for tid in self:
            key = (self._resolve(tid), tid)
            if prev is not None and not prev < key:
                raise AssertionError(f"order violated at TID {tid}: {prev!r} !< {key!r}")
            prev = key
