"""Compression primitives: a ref-counted dictionary and position-based RLE.

Both are independent of the storage layer so they can be tested on their own.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

#: key stored in key vectors for slots that hold no live reference
NO_KEY = np.uint32(0xFFFFFFFF)

#: per-entry overhead of the value->key hash index (hash + key + padding)
HASH_ENTRY_BYTES = 16
REFCOUNT_BYTES = 8


class DictionaryError(KeyError):
    pass


class Dictionary:
    """Ref-counted string dictionary.

    The key of a value is its slot offset. Slots whose reference count drops to
    zero go on a LIFO free list and are handed out again by :meth:`intern`.
    Mutations take ``self.lock``; resolution of live keys is lock-free.

    An *ordered* dictionary is built once from a sorted value domain and is
    immutable afterwards (keys compare like their values).
    """

    def __init__(self, width: Optional[int] = None, *, ordered: bool = False):
        self.width = width
        self.ordered = ordered
        self.lock = threading.Lock()
        self.version = 0
        self._values: list[Optional[bytes]] = []
        self._refs: list[int] = []
        self._free: list[int] = []
        self._index: dict[bytes, int] = {}

    @classmethod
    def build_ordered(cls, values: Iterable[bytes], width: Optional[int] = None) -> "Dictionary":
        d = cls(width, ordered=True)
        d._values = sorted(set(values))
        d._refs = [0] * len(d._values)
        d._index = {v: k for k, v in enumerate(d._values)}
        return d

    def __len__(self) -> int:
        """Number of live (referenced) values."""
        return len(self._values) - len(self._free) if not self.ordered else len(self._values)

    @property
    def slot_count(self) -> int:
        return len(self._values)

    def intern(self, value: bytes, count: int = 1) -> int:
        """Add ``count`` references to ``value`` and return its key."""
        with self.lock:
            return self._intern(value, count)

    def _intern(self, value: bytes, count: int = 1) -> int:
        key = self._index.get(value)
        if key is not None:
            self._refs[key] += count
            return key
        if self.ordered:
            raise DictionaryError(f"{value!r} not in immutable ordered dictionary")
        if self._free:
            key = self._free.pop()
            self._values[key] = value
            self._refs[key] = count
        else:
            key = len(self._values)
            if key >= int(NO_KEY):
                raise OverflowError("dictionary key space exhausted")
            self._values.append(value)
            self._refs.append(count)
        self._index[value] = key
        self.version += 1
        return key

    def intern_many(self, values: Iterable[bytes]) -> list[int]:
        """Intern value by value (one reference each), as an insert path would."""
        with self.lock:
            index, refs = self._index, self._refs
            out = []
            for v in values:
                k = index.get(v)
                if k is None:
                    k = self._intern(v)
                else:
                    refs[k] += 1
                out.append(k)
            return out

    def intern_counts(self, values: Sequence[bytes], counts: Sequence[int]) -> np.ndarray:
        """Intern distinct ``values`` with ``counts`` references each, under one lock."""
        with self.lock:
            return np.fromiter(
                (self._intern(bytes(v), int(c)) for v, c in zip(values, counts)),
                dtype=np.uint32,
                count=len(values),
            )

    def release(self, key: int, count: int = 1) -> None:
        with self.lock:
            self._release(key, count)

    def _release(self, key: int, count: int = 1) -> None:
        key = int(key)
        if not 0 <= key < len(self._refs) or self._refs[key] < count:
            raise DictionaryError(f"release of key {key} without enough references")
        self._refs[key] -= count
        if self._refs[key] == 0 and not self.ordered:
            del self._index[self._values[key]]
            self._values[key] = None
            self._free.append(key)
            self.version += 1

    def release_counts(self, keys: np.ndarray, counts: np.ndarray) -> None:
        with self.lock:
            for k, c in zip(keys.tolist(), counts.tolist()):
                self._release(k, c)

    def value_of(self, key: int) -> bytes:
        try:
            v = self._values[key]
        except (IndexError, TypeError):
            v = None
        if v is None:
            raise DictionaryError(f"key {key} is not live")
        return v

    def key_of(self, value: bytes) -> Optional[int]:
        return self._index.get(value)

    def refcount(self, key: int) -> int:
        return self._refs[key]

    def total_refs(self) -> int:
        return sum(self._refs)

    def live_keys(self) -> list[int]:
        if self.ordered:
            return list(range(len(self._values)))
        return [k for k, v in enumerate(self._values) if v is not None]

    def collect_matching_keys(self, predicate: Callable[[bytes], bool]) -> set[int]:
        return {k for k, v in enumerate(self._values) if v is not None and predicate(v)}

    def nbytes(self) -> int:
        """Memory attributed to the dictionary: slots plus hash index."""
        width = self.width or max((len(v) for v in self._values if v is not None), default=0)
        return len(self._values) * (REFCOUNT_BYTES + width) + len(self) * HASH_ENTRY_BYTES

    def snapshot_refs(self) -> list[int]:
        with self.lock:
            return list(self._refs)

    def view(self) -> "DictionaryView":
        with self.lock:
            return DictionaryView(list(self._values), self.ordered)


class DictionaryView:
    """Read-only copy of a dictionary's key->value mapping at one instant."""

    def __init__(self, values: list[Optional[bytes]], ordered: bool):
        self.values = values
        self.ordered = ordered
        self._index: Optional[dict[bytes, int]] = None
        self._lookup: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.values)

    def value_of(self, key: int) -> bytes:
        v = self.values[key] if 0 <= key < len(self.values) else None
        if v is None:
            raise DictionaryError(f"key {key} is not live in this view")
        return v

    def key_of(self, value: bytes) -> Optional[int]:
        if self._index is None:
            self._index = {v: k for k, v in enumerate(self.values) if v is not None}
        return self._index.get(value)

    def collect_matching_keys(self, predicate: Callable[[bytes], bool]) -> set[int]:
        return {k for k, v in enumerate(self.values) if v is not None and predicate(v)}

    def lookup_array(self) -> np.ndarray:
        """Values as a fixed-width array indexed by key, plus one trailing empty slot."""
        if self._lookup is None:
            vals = [b"" if v is None else v for v in self.values]
            vals.append(b"")
            width = max(1, max(len(v) for v in vals))
            self._lookup = np.array(vals, dtype=f"S{width}")
        return self._lookup

    def resolve(self, keys: np.ndarray) -> np.ndarray:
        """Vectorised value_of; NO_KEY and dead keys map to empty strings."""
        lookup = self.lookup_array()
        return lookup[np.minimum(keys, len(lookup) - 1)]

    def matching_table(self, predicate: Callable[[bytes], bool]) -> np.ndarray:
        """Boolean membership table indexed by key (a perfect hash set)."""
        table = np.zeros(len(self.values) + 1, dtype=bool)
        keys = list(self.collect_matching_keys(predicate))
        if keys:
            table[np.asarray(keys, dtype=np.int64)] = True
        return table

    def key_range(self, low: Optional[bytes], high: Optional[bytes], high_inclusive: bool = True) -> tuple[int, int]:
        """Key interval ``[k_low, k_high]`` of an ordered view; empty if k_low > k_high."""
        if not self.ordered:
            raise DictionaryError("key ranges need an order-preserving dictionary")
        vals = self.values
        k_low = 0 if low is None else bisect.bisect_left(vals, low)
        if high is None:
            k_high = len(vals) - 1
        elif high_inclusive:
            k_high = bisect.bisect_right(vals, high) - 1
        else:
            k_high = bisect.bisect_left(vals, high) - 1
        return k_low, k_high


# ---------------------------------------------------------------------------
# position-based run-length encoding


@dataclass(frozen=True)
class PositionalRuns:
    """Runs stored as exclusive end positions (prefix sums of run lengths).

    ``values[i]`` covers indices ``[positions[i-1], positions[i] - 1]`` with
    ``positions[-1]`` read as 0; the last position is the element count.
    """

    positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.positions) != len(self.values):
            raise ValueError("positions and values differ in length")

    def __len__(self) -> int:
        return int(self.positions[-1]) if len(self.positions) else 0

    @property
    def run_count(self) -> int:
        return len(self.positions)

    def nbytes(self, position_bytes: int = 8) -> int:
        return self.run_count * (position_bytes + self.values.dtype.itemsize)


def rle_encode(sequence: Sequence | np.ndarray) -> PositionalRuns:
    arr = np.asarray(sequence)
    n = len(arr)
    if n == 0:
        return PositionalRuns(np.zeros(0, np.uint64), arr[:0].copy())
    ends = np.flatnonzero(arr[1:] != arr[:-1]) + 1
    positions = np.empty(len(ends) + 1, dtype=np.uint64)
    positions[:-1] = ends
    positions[-1] = n
    return PositionalRuns(positions, arr[positions.astype(np.intp) - 1].copy())


def rle_decode(runs: PositionalRuns) -> np.ndarray:
    if runs.run_count == 0:
        return runs.values[:0].copy()
    lengths = np.diff(runs.positions.astype(np.int64), prepend=0)
    return np.repeat(runs.values, lengths)


@dataclass
class SearchStats:
    """Counts position comparisons made by :func:`rle_value_at`."""

    comparisons: int = 0
    lookups: int = 0


def rle_value_at(runs: PositionalRuns, index: int, stats: Optional[SearchStats] = None):
    """Binary search for the smallest run whose end position exceeds ``index``."""
    n = len(runs)
    if not 0 <= index < n:
        raise IndexError(f"index {index} out of range for {n} elements")
    positions = runs.positions
    lo, hi = 0, runs.run_count - 1
    cmp = 0
    while lo < hi:
        mid = (lo + hi) >> 1
        cmp += 1
        if positions[mid] > index:
            hi = mid
        else:
            lo = mid + 1
    if stats is not None:
        stats.comparisons += cmp
        stats.lookups += 1
    return runs.values[lo]


def comparison_bound(run_count: int) -> int:
    return math.ceil(math.log2(run_count)) + 1 if run_count > 1 else 1


def rle_values_at(runs: PositionalRuns, indices: np.ndarray) -> np.ndarray:
    """Vectorised point access for many indices at once."""
    slots = np.searchsorted(runs.positions, np.asarray(indices, dtype=np.uint64), side="right")
    return runs.values[slots]


def rle_gain(sequence, position_bytes: int = 8, value_bytes: Optional[int] = None) -> float:
    arr = np.asarray(sequence)
    if value_bytes is None:
        value_bytes = arr.dtype.itemsize
    n = len(arr)
    if n == 0:
        return 1.0
    runs = 1 + int(np.count_nonzero(arr[1:] != arr[:-1]))
    return (n * value_bytes) / (runs * (position_bytes + value_bytes))


@dataclass(frozen=True)
class LengthRuns:
    """Classic (run length, value) encoding; point access needs a linear walk."""

    lengths: np.ndarray
    values: np.ndarray

    @classmethod
    def from_positional(cls, runs: PositionalRuns) -> "LengthRuns":
        return cls(np.diff(runs.positions.astype(np.int64), prepend=0), runs.values)

    def value_at(self, index: int, stats: Optional[SearchStats] = None):
        if index < 0:
            raise IndexError(index)
        covered = 0
        cmp = 0
        for i, length in enumerate(self.lengths.tolist()):
            covered += length
            cmp += 1
            if index < covered:
                if stats is not None:
                    stats.comparisons += cmp
                    stats.lookups += 1
                return self.values[i]
        raise IndexError(f"index {index} beyond {covered} elements")


# ---------------------------------------------------------------------------
# Zipf-distributed value pools


@dataclass
class ZipfPool:
    """``n`` distinct values where rank ``r`` (1-based) is drawn with weight r**-s."""

    values: list[str]
    s: float
    probabilities: np.ndarray = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ranks = np.arange(1, len(self.values) + 1, dtype=np.float64)
        w = ranks ** (-self.s)
        self.probabilities = w / w.sum()
        cdf = np.cumsum(self.probabilities)
        cdf[-1] = 1.0
        self._cdf = cdf

    def __len__(self) -> int:
        return len(self.values)

    def sample_ranks(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """0-based rank indices."""
        return np.searchsorted(self._cdf, rng.random(size), side="right")

    def sample(self, size: int, rng: np.random.Generator) -> list[str]:
        vals = self.values
        return [vals[i] for i in self.sample_ranks(size, rng).tolist()]


_LETTERS = np.frombuffer(b"ABCDEFGHIJKLMNOPQRSTUVWXYZ", dtype=np.uint8)


def gen_zipf_pool(n: int, s: float = 1.2, length: int = 24, seed: int = 0) -> ZipfPool:
    """Synthetic name pool: ``n`` distinct upper-case strings of ``length`` chars."""
    if n < 1:
        raise ValueError("pool needs at least one value")
    if s < 0:
        raise ValueError("zipf exponent must be >= 0")
    if 26**length < n:
        raise ValueError(f"cannot make {n} distinct strings of length {length}")
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        need = n - len(out)
        letters = _LETTERS[rng.integers(0, 26, size=(need, length))]
        for row in letters:
            name = row.tobytes().decode("ascii")
            if name not in seen:
                seen.add(name)
                out.append(name)
    return ZipfPool(out, s)
