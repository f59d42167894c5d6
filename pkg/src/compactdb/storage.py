"""Relations, partitions, chunks and vectors.

A relation is split into ``p`` partitions; each partition is a sequence of
fixed-capacity chunks holding one vector per attribute. A TID is the
partition-local position ``chunk_index * capacity + offset``; slots are never
reused, so a TID always names the same tuple version.
"""

from __future__ import annotations

import bisect
import threading
import zlib
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .codecs import NO_KEY, Dictionary, PositionalRuns, rle_value_at
from .observer import Temperature
from .schema import Schema, SchemaError
from .snapshot import FrozenWriteError, PageClass, PageDescriptor, descriptor_count


class Representation(Enum):
    UNCOMPRESSED = "uncompressed"
    DICT_KEYS = "dict_keys"
    POSITIONAL_RLE = "positional_rle"


class NotFoundError(KeyError):
    """TID does not name a valid tuple."""


class DuplicateKeyError(ValueError):
    pass


# ---------------------------------------------------------------------------


class InvalidRangeList:
    """Sorted, disjoint, non-adjacent inclusive TID ranges."""

    __slots__ = ("_begins", "_ends")

    def __init__(self, ranges: Iterable[tuple[int, int]] = ()):
        self._begins: list[int] = []
        self._ends: list[int] = []
        for b, e in ranges:
            self.add(b, e)

    def add(self, begin: int, end: int) -> None:
        if begin > end:
            raise ValueError(f"empty range [{begin}, {end}]")
        begins, ends = self._begins, self._ends
        # ranges that overlap or touch [begin, end]
        i = bisect.bisect_left(ends, begin - 1)
        j = bisect.bisect_right(begins, end + 1)
        if i < j:
            begin = min(begin, begins[i])
            end = max(end, ends[j - 1])
        begins[i:j] = [begin]
        ends[i:j] = [end]

    def __contains__(self, tid: int) -> bool:
        i = bisect.bisect_right(self._begins, tid) - 1
        return i >= 0 and tid <= self._ends[i]

    def __len__(self) -> int:
        return len(self._begins)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return zip(self._begins, self._ends)

    def __eq__(self, other) -> bool:
        return isinstance(other, InvalidRangeList) and list(self) == list(other)

    def __repr__(self) -> str:
        return f"InvalidRangeList({list(self)})"

    def ranges(self) -> list[tuple[int, int]]:
        return list(self)

    def copy(self) -> "InvalidRangeList":
        out = InvalidRangeList()
        out._begins = list(self._begins)
        out._ends = list(self._ends)
        return out

    def tid_count(self) -> int:
        return sum(e - b + 1 for b, e in self)

    def window(self, lo: int, hi: int) -> tuple[list[int], list[int]]:
        """Ranges intersecting ``[lo, hi]``, clipped to it."""
        i = bisect.bisect_left(self._ends, lo)
        j = bisect.bisect_right(self._begins, hi)
        if i >= j:
            return [], []
        b = self._begins[i:j]
        e = self._ends[i:j]
        b[0] = max(b[0], lo)
        e[-1] = min(e[-1], hi)
        return b, e

    def clear_mask(self, mask: np.ndarray, base: int) -> int:
        """Set ``mask[t - base] = False`` for invalid TIDs ``t``; returns range count."""
        n = len(mask)
        if n == 0:
            return 0
        b, e = self.window(base, base + n - 1)
        if not b:
            return 0
        if len(b) <= 16:
            for x, y in zip(b, e):
                mask[x - base:y - base + 1] = False
        else:
            # slot positions of every invalid TID, in time proportional to their count
            lo = np.asarray(b, dtype=np.int64) - base
            lens = np.asarray(e, dtype=np.int64) - base + 1 - lo
            shift = np.repeat(lo - (np.cumsum(lens) - lens), lens)
            mask[shift + np.arange(len(shift))] = False
        return len(b)


# ---------------------------------------------------------------------------


class Vector:
    """Storage of one attribute inside one chunk."""

    __slots__ = (
        "key", "attr_type", "representation", "data", "keyed", "page_class", "page_size",
        "pages", "temperature", "read_pages", "write_pages", "tracker", "replications", "elem_bytes",
    )

    def __init__(self, key, attr_type, representation, data, keyed, page_class, page_size):
        self.key = key
        self.attr_type = attr_type
        self.representation = representation
        self.data = data
        self.keyed = keyed
        self.page_class = page_class
        self.page_size = page_size
        self.pages: list[PageDescriptor] = []
        self.temperature = Temperature.HOT
        self.read_pages: set[int] = set()
        self.write_pages: set[int] = set()
        self.tracker: Optional[set[int]] = None
        self.replications = 0
        if isinstance(data, PositionalRuns):
            self.elem_bytes = 8 + data.values.dtype.itemsize
        else:
            self.elem_bytes = data.dtype.itemsize

    @classmethod
    def hot(cls, key, attr_type, capacity: int, page_size: int, eager: bool = False) -> "Vector":
        if eager and attr_type.is_string:
            data = np.full(capacity, NO_KEY, dtype=np.uint32)
            return cls(key, attr_type, Representation.DICT_KEYS, data, True, PageClass.REGULAR, page_size)
        data = np.zeros(capacity, dtype=attr_type.dtype)
        return cls(key, attr_type, Representation.UNCOMPRESSED, data, False, PageClass.REGULAR, page_size)

    @classmethod
    def frozen(cls, key, attr_type, data, keyed: bool, huge_page_size: int, epoch: int) -> "Vector":
        if isinstance(data, PositionalRuns):
            rep = Representation.POSITIONAL_RLE
        elif keyed:
            rep = Representation.DICT_KEYS
        else:
            rep = Representation.UNCOMPRESSED
        vec = cls(key, attr_type, rep, data, keyed, PageClass.HUGE, huge_page_size)
        vec.temperature = Temperature.FROZEN
        vec.pages = [
            PageDescriptor(epoch, PageClass.HUGE)
            for _ in range(descriptor_count(vec.stored_bytes(), huge_page_size))
        ]
        return vec

    @property
    def is_runs(self) -> bool:
        return isinstance(self.data, PositionalRuns)

    def stored_bytes(self, n: Optional[int] = None) -> int:
        """Bytes of the current representation (first ``n`` slots if uncompressed)."""
        if isinstance(self.data, PositionalRuns):
            return self.data.nbytes(8)
        if n is None:
            n = len(self.data)
        return n * self.elem_bytes

    def byte_offset(self, slot: int) -> int:
        if isinstance(self.data, PositionalRuns):
            idx = int(np.searchsorted(self.data.positions, slot, side="right"))
            return idx * self.elem_bytes
        return slot * self.elem_bytes

    def get(self, slot: int):
        """Stored element (raw value or key) at ``slot``."""
        data = self.data
        if isinstance(data, PositionalRuns):
            return rle_value_at(data, slot)
        return data[slot]

    def stored(self, n: int) -> np.ndarray:
        from .codecs import rle_decode

        if isinstance(self.data, PositionalRuns):
            return rle_decode(self.data)[:n]
        return self.data[:n]

    def page_count(self, n: Optional[int] = None) -> int:
        return max(1, descriptor_count(self.stored_bytes(n), self.page_size))


class Chunk:
    __slots__ = (
        "key", "index", "base", "capacity", "vectors", "count", "valid", "deleted",
        "frozen", "freezing", "frozen_epoch", "latch", "fast_cycle", "fast_epoch", "fast_limit",
    )

    def __init__(self, key, index: int, capacity: int, vectors: list[Vector], latch):
        self.key = key
        self.index = index
        self.base = index * capacity
        self.capacity = capacity
        self.vectors = vectors
        self.count = 0
        self.valid = np.ones(capacity, dtype=bool)
        self.deleted = 0
        self.frozen = False
        self.freezing = False
        self.frozen_epoch = -1
        self.latch = latch
        self.fast_cycle = -1
        self.fast_epoch = -1
        self.fast_limit = 0

    @property
    def temperature(self) -> Temperature:
        return max(v.temperature for v in self.vectors)

    def set_temperature(self, temperature: Temperature) -> None:
        for v in self.vectors:
            v.temperature = temperature

    @property
    def full(self) -> bool:
        return self.count >= self.capacity

    def page_counts(self) -> list[int]:
        return [v.page_count(self.count) for v in self.vectors]

    def __repr__(self):
        return f"Chunk({self.key}, count={self.count}, {self.temperature.name})"


# ---------------------------------------------------------------------------


class Partition:
    """One horizontal partition; mutated by a single writer at a time."""

    def __init__(self, relation: "Relation", index: int):
        self.relation = relation
        self.index = index
        self.capacity = relation.chunk_capacity
        self.chunks: list[Chunk] = []
        self.invalid = InvalidRangeList()
        self.pk_index: dict = {}
        self.indexes: dict[int, object] = {}
        self.latch = threading.RLock()
        self.version = 0
        self.invalid_version = 0
        self.persisted_chunks: dict[int, int] = {}

    def __repr__(self):
        return f"Partition({self.relation.name}#{self.index}, chunks={len(self.chunks)})"

    # -- geometry -------------------------------------------------------

    @property
    def next_tid(self) -> int:
        if not self.chunks:
            return 0
        last = self.chunks[-1]
        return last.base + last.count

    def locate(self, tid: int) -> tuple[Chunk, int]:
        ci, off = divmod(tid, self.capacity)
        if tid < 0 or ci >= len(self.chunks) or off >= self.chunks[ci].count:
            raise NotFoundError(f"TID {tid} was never assigned")
        return self.chunks[ci], off

    def is_valid(self, tid: int) -> bool:
        try:
            chunk, off = self.locate(tid)
        except NotFoundError:
            return False
        return bool(chunk.valid[off]) and tid not in self.invalid

    def _locate_valid(self, tid: int) -> tuple[Chunk, int]:
        chunk, off = self.locate(tid)
        if not chunk.valid[off]:
            raise NotFoundError(f"TID {tid} has been deleted")
        if tid in self.invalid:
            raise NotFoundError(f"TID {tid} has been invalidated")
        return chunk, off

    def __len__(self) -> int:
        """Number of valid tuples."""
        return len(self.pk_index)

    # -- low level write path -------------------------------------------

    def _new_chunk(self) -> Chunk:
        rel = self.relation
        engine = rel.engine
        ci = len(self.chunks)
        key = (rel.name, self.index, ci)
        eager = engine.config.eager_compression
        ps = engine.config.observer.page_size
        vectors = [
            Vector.hot(key + (a,), attr.type, self.capacity, ps, eager)
            for a, attr in enumerate(rel.schema.attributes)
        ]
        chunk = Chunk(key, ci, self.capacity, vectors, self.latch)
        self.chunks.append(chunk)
        engine.observer.register_chunk(chunk)
        return chunk

    def _head(self) -> Chunk:
        if self.chunks:
            last = self.chunks[-1]
            if (
                last.count < last.capacity
                and not last.frozen
                and not last.freezing
                and last.temperature is Temperature.HOT
            ):
                return last
        return self._new_chunk()

    def _touch(self, vec: Vector, lo: int, hi: int) -> None:
        """Copy-on-write and write observation for bytes ``[lo, hi)``."""
        if vec.page_class is PageClass.HUGE:
            raise FrozenWriteError(f"write to frozen vector {vec.key}")
        ps = vec.page_size
        pages = vec.pages
        snaps = self.relation.engine.snapshots
        first, last = lo // ps, (hi - 1) // ps
        while len(pages) <= last:
            pages.append(PageDescriptor(snaps.epoch))
        shared_before = snaps.max_live_epoch
        for p in range(first, last + 1):
            if pages[p].epoch < shared_before:
                snaps.replicate(vec, p)
        vec.write_pages.update(range(first, last + 1))
        if vec.tracker is not None:
            vec.tracker.update(range(first, last + 1))

    def _write_slot(self, chunk: Chunk, slot: int, values: Sequence) -> None:
        """Append-path write of a whole tuple into an unused slot."""
        engine = self.relation.engine
        cycle, epoch = engine.observer.cycle, engine.snapshots.epoch
        if not (chunk.fast_cycle == cycle and chunk.fast_epoch == epoch and slot < chunk.fast_limit):
            limit = chunk.capacity
            for vec in chunk.vectors:
                w = vec.elem_bytes
                lo = slot * w
                self._touch(vec, lo, lo + w)
                ps = vec.page_size
                page_end = ((lo + w - 1) // ps + 1) * ps
                limit = min(limit, (page_end - w) // w + 1)
            chunk.fast_cycle, chunk.fast_epoch, chunk.fast_limit = cycle, epoch, limit
        for vec, v in zip(chunk.vectors, values):
            vec.data[slot] = v

    def _write_value(self, chunk: Chunk, slot: int, attr: int, raw) -> None:
        vec = chunk.vectors[attr]
        w = vec.elem_bytes
        self._touch(vec, slot * w, slot * w + w)
        vec.data[slot] = raw

    def _note_read(self, vec: Vector, slot: int) -> None:
        vec.read_pages.add(vec.byte_offset(slot) // self.relation.engine.config.observer.page_size)

    def _read_stored(self, vec: Vector, slot: int):
        data = vec.data
        if isinstance(data, PositionalRuns):
            return rle_value_at(data, slot)
        return data[slot]

    def _resolve(self, attr: int, vec: Vector, stored):
        if vec.keyed:
            return self.relation.dictionaries[attr].value_of(int(stored))
        if vec.attr_type.is_string:
            return bytes(stored)
        return int(stored)

    def value_at(self, tid: int, attr: int):
        """Stored value (internal form) regardless of validity; no observation."""
        ci, off = divmod(tid, self.capacity)
        vec = self.chunks[ci].vectors[attr]
        return self._resolve(attr, vec, self._read_stored(vec, off))

    def _row_internal(self, chunk: Chunk, off: int, note: bool = False) -> list:
        out = []
        for a, vec in enumerate(chunk.vectors):
            if note:
                self._note_read(vec, off)
            out.append(self._resolve(a, vec, self._read_stored(vec, off)))
        return out

    def _intern_row(self, values: list) -> list:
        dicts = self.relation.dictionaries
        out = list(values)
        for a in self.relation.string_attrs:
            out[a] = dicts[a].intern(out[a])
        return out

    def _insert_internal(self, values: list) -> int:
        rel = self.relation
        pk = rel.pk_of(values)
        if pk in self.pk_index:
            raise DuplicateKeyError(f"duplicate primary key {pk!r} in {rel.name}")
        chunk = self._head()
        slot = chunk.count
        stored = self._intern_row(values) if rel.engine.config.eager_compression else values
        self._write_slot(chunk, slot, stored)
        chunk.count = slot + 1
        tid = chunk.base + slot
        self.pk_index[pk] = tid
        for idx in self.indexes.values():
            idx.insert(tid)
        self.version += 1
        return tid

    def _release_slot_keys(self, chunk: Chunk, off: int) -> None:
        """Drop dictionary references held by a hot keyed slot (eager mode)."""
        dicts = self.relation.dictionaries
        for a, vec in enumerate(chunk.vectors):
            if vec.keyed and not chunk.frozen:
                k = int(vec.data[off])
                if k != int(NO_KEY):
                    dicts[a].release(k)

    def _retire(self, chunk: Chunk, off: int, tid: int) -> None:
        """Remove a tuple from its origin: bitmap when hot/cooling, else invalidation."""
        if not chunk.frozen and not chunk.freezing and chunk.temperature >= Temperature.COOLING:
            chunk.valid[off] = False
            chunk.deleted += 1
            self._release_slot_keys(chunk, off)
        else:
            self.invalid.add(tid, tid)
            self.invalid_version += 1

    # -- tuple operations -----------------------------------------------

    def insert(self, row: Sequence) -> int:
        values = self.relation.convert(row)
        with self.latch:
            return self._insert_internal(values)

    def insert_raw(self, values: list) -> int:
        """Insert a tuple already in internal representation."""
        with self.latch:
            return self._insert_internal(values)

    def insert_many(self, columns: Sequence, checked: bool = False) -> np.ndarray:
        """Append many tuples given as internal-value columns; returns their TIDs.

        In eager mode every string value is interned individually, exactly as
        the same number of single inserts would.
        """
        rel = self.relation
        cols = columns if checked else rel.check_columns(columns)
        n = len(cols[0])
        pk = rel.schema.primary_key
        pk_cols = [cols[i].tolist() for i in pk]
        keys = pk_cols[0] if len(pk) == 1 else list(zip(*pk_cols))
        if len(set(keys)) != n or not self.pk_index.keys().isdisjoint(keys):
            raise DuplicateKeyError(f"duplicate primary key in bulk insert into {rel.name}")
        tids = np.empty(n, dtype=np.int64)
        with self.latch:
            stored = list(cols)
            if rel.engine.config.eager_compression:
                for a in rel.string_attrs:
                    d = rel.dictionaries[a]
                    stored[a] = np.fromiter(
                        (d.intern(v) for v in cols[a].tolist()), dtype=np.uint32, count=n
                    )
            pos = 0
            while pos < n:
                chunk = self._head()
                start = chunk.count
                take = min(chunk.capacity - start, n - pos)
                for vec, col in zip(chunk.vectors, stored):
                    w = vec.elem_bytes
                    self._touch(vec, start * w, (start + take) * w)
                    vec.data[start:start + take] = col[pos:pos + take]
                chunk.count = start + take
                tids[pos:pos + take] = np.arange(chunk.base + start, chunk.base + start + take)
                pos += take
            self.pk_index.update(zip(keys, tids.tolist()))
            for idx in self.indexes.values():
                for tid in tids.tolist():
                    idx.insert(tid)
            self.version += 1
        return tids

    def point_read(self, tid: int, attr: int | str):
        rel = self.relation
        a = rel.schema.index_of(attr)
        with self.latch:
            chunk, off = self._locate_valid(tid)
            vec = chunk.vectors[a]
            self._note_read(vec, off)
            raw = self._resolve(a, vec, self._read_stored(vec, off))
        return rel.schema.attributes[a].type.to_external(raw)

    def read_row(self, tid: int) -> tuple:
        rel = self.relation
        with self.latch:
            chunk, off = self._locate_valid(tid)
            row = self._row_internal(chunk, off, note=True)
        return rel.to_external(row)

    def lookup(self, key) -> Optional[int]:
        """TID of the tuple with primary key ``key`` (external values)."""
        return self.pk_index.get(self.relation.pk_from_external(key))

    def update(self, tid: int, attr: int | str, value) -> int:
        """Set one attribute; returns the tuple's TID afterwards (new if relocated)."""
        a = self.relation.schema.index_of(attr)
        return self.update_raw(tid, a, self.relation.schema.attributes[a].type.to_internal(value))

    def update_raw(self, tid: int, a: int, raw) -> int:
        """:meth:`update` with an attribute index and an internal value."""
        with self.latch:
            chunk, off = self._locate_valid(tid)
            temp = chunk.temperature
            if chunk.frozen or chunk.freezing or temp <= Temperature.COOLING:
                return self._relocate(chunk, off, tid, {a: raw})
            self._update_in_place(chunk, off, tid, a, raw)
            return tid

    def _update_in_place(self, chunk: Chunk, off: int, tid: int, a: int, raw) -> None:
        rel = self.relation
        pk_change = a in rel.schema.primary_key
        if pk_change:
            row = self._row_internal(chunk, off)
            old_pk = rel.pk_of(row)
            row[a] = raw
            new_pk = rel.pk_of(row)
            if new_pk != old_pk and new_pk in self.pk_index:
                raise DuplicateKeyError(f"duplicate primary key {new_pk!r} in {rel.name}")
        idx = self.indexes.get(a)
        if idx is not None:
            idx.delete(tid)
        vec = chunk.vectors[a]
        if vec.keyed:
            d = rel.dictionaries[a]
            old = int(vec.data[off])
            new = d.intern(raw)
            self._write_value(chunk, off, a, new)
            d.release(old)
        else:
            self._write_value(chunk, off, a, raw)
        if idx is not None:
            idx.insert(tid)
        if pk_change:
            del self.pk_index[old_pk]
            self.pk_index[new_pk] = tid
        self.version += 1

    def write_in_place(self, tid: int, attr: int | str, value) -> None:
        """Overwrite a stored value without relocation, whatever the temperature.

        This is the raw path a concurrent writer would take on a vector that
        is being compressed; it exists so the freeze protocol can be exercised.
        Frozen vectors reject it.
        """
        rel = self.relation
        a = rel.schema.index_of(attr)
        raw = rel.schema.attributes[a].type.to_internal(value)
        with self.latch:
            chunk, off = self._locate_valid(tid)
            if chunk.frozen:
                raise FrozenWriteError(f"TID {tid} lives in a frozen chunk")
            self._update_in_place(chunk, off, tid, a, raw)

    def _relocate(self, chunk: Chunk, off: int, tid: int, changes: dict[int, object]) -> int:
        rel = self.relation
        row = self._row_internal(chunk, off, note=True)
        old_pk = rel.pk_of(row)
        for a, v in changes.items():
            row[a] = v
        new_pk = rel.pk_of(row)
        if new_pk != old_pk and new_pk in self.pk_index:
            raise DuplicateKeyError(f"duplicate primary key {new_pk!r} in {rel.name}")
        for idx in self.indexes.values():
            idx.delete(tid)
        del self.pk_index[old_pk]
        self._retire(chunk, off, tid)
        return self._insert_internal(row)

    def relocate(self, tid: int) -> int:
        with self.latch:
            chunk, off = self._locate_valid(tid)
            if chunk.temperature is Temperature.HOT and not chunk.frozen and not chunk.freezing:
                raise ValueError(f"TID {tid} is already in a hot chunk")
            return self._relocate(chunk, off, tid, {})

    def delete(self, tid: int) -> None:
        rel = self.relation
        with self.latch:
            chunk, off = self._locate_valid(tid)
            for idx in self.indexes.values():
                idx.delete(tid)
            pk = rel.pk_of([self.value_at(tid, a) if a in rel.pk_set else None
                            for a in range(len(rel.schema))])
            del self.pk_index[pk]
            self._retire(chunk, off, tid)
            self.version += 1

    def invalidate_range(self, begin: int, end: int) -> None:
        """Mark ``[begin, end]`` invalid; valid tuples inside leave all indexes."""
        if begin > end:
            raise ValueError(f"empty range [{begin}, {end}]")
        rel = self.relation
        with self.latch:
            hi = min(end, self.next_tid - 1)
            for tid in range(max(begin, 0), hi + 1):
                if not self.is_valid(tid):
                    continue
                for idx in self.indexes.values():
                    idx.delete(tid)
                pk = rel.pk_of([self.value_at(tid, a) if a in rel.pk_set else None
                                for a in range(len(rel.schema))])
                del self.pk_index[pk]
            self.invalid.add(begin, end)
            self.invalid_version += 1
            self.version += 1

    # -- scanning -------------------------------------------------------

    def valid_mask(self, chunk: Chunk) -> np.ndarray:
        n = chunk.count
        mask = chunk.valid[:n].copy() if chunk.deleted else np.ones(n, dtype=bool)
        self.invalid.clear_mask(mask, chunk.base)
        return mask

    def valid_runs(self, chunk_index: int) -> Iterator[tuple[int, int]]:
        chunk = self.chunks[chunk_index]
        yield from mask_runs(self.valid_mask(chunk), chunk.base)

    def tids(self) -> Iterator[int]:
        for ci in range(len(self.chunks)):
            for b, e in self.valid_runs(ci):
                yield from range(b, e + 1)

    def scan(self) -> Iterator[tuple]:
        """Live full scan (OLTP side; notes no accesses)."""
        rel = self.relation
        for tid in self.tids():
            chunk, off = self.locate(tid)
            yield rel.to_external(self._row_internal(chunk, off))


def mask_runs(mask: np.ndarray, base: int = 0) -> Iterator[tuple[int, int]]:
    """Maximal runs of True in ``mask`` as inclusive ``(base+b, base+e)``."""
    if len(mask) == 0:
        return
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    for b, e in zip(edges[0::2].tolist(), edges[1::2].tolist()):
        yield base + b, base + e - 1


def _stable_hash(key) -> int:
    """Process-independent hash (``hash`` of bytes is salted per interpreter)."""
    if isinstance(key, int):
        return key
    return zlib.crc32(repr(key).encode())


# ---------------------------------------------------------------------------


class Relation:
    def __init__(
        self,
        engine,
        name: str,
        schema: Schema,
        partitions: int = 1,
        route_attr: Optional[int | str] = None,
    ):
        if partitions < 1:
            raise ValueError("a relation needs at least one partition")
        self.engine = engine
        self.name = name
        self.schema = schema
        self.chunk_capacity = engine.config.chunk_capacity
        self.route_attr = None if route_attr is None else schema.index_of(route_attr)
        self.string_attrs = schema.string_attributes()
        self.pk_set = frozenset(schema.primary_key)
        self.dictionaries: dict[int, Dictionary] = {
            a: Dictionary(schema.attributes[a].type.length) for a in self.string_attrs
        }
        self.persisted_dictionaries: dict[int, int] = {}
        self.partitions = [Partition(self, i) for i in range(partitions)]
        self._types = [a.type for a in schema.attributes]
        pk = schema.primary_key
        if len(pk) == 1:
            only = pk[0]
            self.pk_of = lambda vals: vals[only]
        else:
            self.pk_of = lambda vals: tuple(vals[i] for i in pk)

    def __repr__(self):
        return f"Relation({self.name!r}, p={len(self.partitions)})"

    @property
    def partition_count(self) -> int:
        return len(self.partitions)

    def convert(self, row: Sequence) -> list:
        types = self._types
        if len(row) != len(types):
            raise ValueError(f"{self.name} expects {len(types)} values, got {len(row)}")
        return [t.to_internal(v) for t, v in zip(types, row)]

    def to_external(self, values: Sequence) -> tuple:
        return tuple(t.to_external(v) for t, v in zip(self._types, values))

    def pk_from_external(self, key):
        pk = self.schema.primary_key
        if len(pk) == 1:
            return self._types[pk[0]].to_internal(key)
        return tuple(self._types[i].to_internal(v) for i, v in zip(pk, key))

    def route(self, values: list) -> int:
        if self.route_attr is not None:
            return (values[self.route_attr] - 1) % len(self.partitions)
        if len(self.partitions) == 1:
            return 0
        return _stable_hash(self.pk_of(values)) % len(self.partitions)

    def route_many(self, columns: Sequence[np.ndarray]) -> np.ndarray:
        p = len(self.partitions)
        if p == 1:
            return np.zeros(len(columns[0]), dtype=np.int64)
        if self.route_attr is not None:
            return (columns[self.route_attr].astype(np.int64) - 1) % p
        pk = self.schema.primary_key
        cols = [columns[i].tolist() for i in pk]
        keys = cols[0] if len(pk) == 1 else zip(*cols)
        return np.fromiter((_stable_hash(k) % p for k in keys), dtype=np.int64, count=len(columns[0]))

    def insert_many(self, columns: Sequence) -> list[np.ndarray]:
        """Bulk insert of column arrays in internal representation; TIDs per partition."""
        cols = self.check_columns(columns)
        parts = self.route_many(cols)
        out = []
        for p, part in enumerate(self.partitions):
            sel = np.flatnonzero(parts == p)
            if len(sel) == len(parts):
                out.append(part.insert_many(cols, checked=True))
            elif len(sel):
                out.append(part.insert_many([c[sel] for c in cols], checked=True))
            else:
                out.append(np.zeros(0, dtype=np.int64))
        return out

    def check_columns(self, columns: Sequence) -> list[np.ndarray]:
        if len(columns) != len(self._types):
            raise ValueError(f"{self.name} expects {len(self._types)} columns, got {len(columns)}")
        out = []
        n = None
        for t, c in zip(self._types, columns):
            arr = np.asarray(c)
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise ValueError("columns differ in length")
            if t.is_string:
                if arr.dtype.kind != "S":
                    arr = np.array([t.to_internal(v) for v in arr.tolist()], dtype=t.dtype)
                elif arr.dtype.itemsize > t.length:
                    if len(arr) and int(np.char.str_len(arr).max()) > t.length:
                        raise SchemaError(f"value longer than {t}")
                    arr = arr.astype(t.dtype)
                else:
                    arr = arr.astype(t.dtype, copy=False)
            else:
                if arr.dtype.kind not in "iu":
                    raise SchemaError(f"{t} column needs integer (internal) values, got {arr.dtype}")
                if len(arr) and t.dtype == np.int32:
                    lo, hi = int(arr.min()), int(arr.max())
                    if lo < -(2**31) or hi > 2**31 - 1:
                        raise SchemaError(f"values out of range for {t}")
                arr = arr.astype(t.dtype, copy=False)
            out.append(arr)
        return out

    def insert(self, row: Sequence) -> tuple[int, int]:
        """Insert into the routed partition; returns ``(partition, tid)``."""
        values = self.convert(row)
        p = self.route(values)
        part = self.partitions[p]
        with part.latch:
            return p, part._insert_internal(values)

    def insert_raw(self, values: list) -> tuple[int, int]:
        p = self.route(values)
        part = self.partitions[p]
        with part.latch:
            return p, part._insert_internal(values)

    def lookup(self, key) -> Optional[tuple[int, int]]:
        internal = self.pk_from_external(key)
        for part in self.partitions:
            tid = part.pk_index.get(internal)
            if tid is not None:
                return part.index, tid
        return None

    def scan(self) -> Iterator[tuple]:
        for part in self.partitions:
            yield from part.scan()

    def row_count(self) -> int:
        return sum(len(p) for p in self.partitions)

    def use_ordered_dictionary(self, attr: int | str, domain: Iterable[str | bytes]) -> Dictionary:
        """Replace an attribute's dictionary by an immutable order-preserving one."""
        a = self.schema.index_of(attr)
        if a not in self.dictionaries:
            raise ValueError(f"{self.schema.attributes[a].name} is not a string attribute")
        if self.dictionaries[a].total_refs():
            raise ValueError("ordered dictionaries must be installed before any compression")
        t = self._types[a]
        d = Dictionary.build_ordered((t.to_internal(v) for v in domain), t.length)
        self.dictionaries[a] = d
        return d
