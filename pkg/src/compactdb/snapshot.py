"""Copy-on-write snapshots modelled on page-descriptor tables.

Every vector owns a table of :class:`PageDescriptor` entries, one per page
its bytes occupy. Creating a snapshot copies all tables (the analogue of a
``fork`` copying the page table). Before a writer mutates a page whose
descriptor predates a live snapshot, the page's current bytes are preserved
in the descriptor's :class:`Frame` for the snapshots that still see it, and
the writer continues on a fresh descriptor.
"""

from __future__ import annotations

import threading
import time
from contextlib import ExitStack
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .codecs import DictionaryView, PositionalRuns, rle_decode, rle_values_at


class PageClass(Enum):
    REGULAR = "regular"
    HUGE = "huge"


class FrozenWriteError(RuntimeError):
    """A write path tried to modify a page of frozen (huge-page) data."""


class SnapshotError(RuntimeError):
    pass


class Frame:
    """Physical page. ``copy`` is set once the page has been replicated."""

    __slots__ = ("copy", "holders")

    def __init__(self):
        self.copy: Optional[np.ndarray] = None
        self.holders = 0


class PageDescriptor:
    __slots__ = ("frame", "epoch", "page_class")

    def __init__(self, epoch: int, page_class: PageClass = PageClass.REGULAR):
        self.frame = Frame()
        self.epoch = epoch
        self.page_class = page_class

    def __repr__(self):
        return f"PageDescriptor(epoch={self.epoch}, {self.page_class.value})"


def descriptor_count(nbytes: int, page_bytes: int) -> int:
    return -(-nbytes // page_bytes)


@dataclass
class SnapshotStats:
    epoch: int
    descriptors_copied: int = 0
    pages_replicated: int = 0
    creation_seconds: float = 0.0


class SnapshotManager:
    def __init__(self, page_size: int = 4096, huge_page_size: int = 2 * 1024 * 1024):
        self.page_size = page_size
        self.huge_page_size = huge_page_size
        self.epoch = 0
        self.max_live_epoch = -1
        self.live: dict[int, "SnapshotHandle"] = {}
        self.replications = 0
        self.frames_preserved = 0
        self.history: list[SnapshotStats] = []
        self._lock = threading.Lock()

    # -- write path -----------------------------------------------------

    def replicate(self, vector, page: int) -> None:
        """Preserve ``page`` of ``vector`` for the snapshots sharing it."""
        desc = vector.pages[page]
        if desc.page_class is PageClass.HUGE:
            raise FrozenWriteError(f"write to huge page {page} of {vector.key}")
        with self._lock:
            holders = [h for h in self.live.values() if h.epoch > desc.epoch]
            ps = self.page_size
            raw = vector.data.view(np.uint8)
            frame = desc.frame
            frame.copy = raw[page * ps:(page + 1) * ps].copy()
            frame.holders = len(holders)
            self.frames_preserved += 1
            self.replications += 1
            for h in holders:
                h.stats.pages_replicated += 1
            vector.pages[page] = PageDescriptor(self.epoch)
            vector.replications += 1

    # -- lifecycle ------------------------------------------------------

    def create(self, engine) -> "SnapshotHandle":
        t0 = time.perf_counter()
        partitions = [p for rel in engine.relations.values() for p in rel.partitions]
        with ExitStack() as stack:
            for p in partitions:
                stack.enter_context(p.latch)
            with self._lock:
                self.epoch += 1
                epoch = self.epoch
            handle = SnapshotHandle(epoch, self)
            for rel in engine.relations.values():
                handle.relations[rel.name] = RelationView.capture(rel, handle.stats)
            with self._lock:
                self.live[epoch] = handle
                self.max_live_epoch = max(self.live)
        handle.stats.creation_seconds = time.perf_counter() - t0
        self.history.append(handle.stats)
        return handle

    def drop(self, handle: "SnapshotHandle") -> None:
        with self._lock:
            if not handle.live or self.live.get(handle.epoch) is not handle:
                raise SnapshotError(f"snapshot {handle.epoch} already dropped")
            handle.live = False
            del self.live[handle.epoch]
            self.max_live_epoch = max(self.live) if self.live else -1
            for vv in handle.vector_views():
                if vv.vector.replications == vv.replications:
                    continue
                for desc in vv.pages:
                    frame = desc.frame
                    if frame.copy is not None:
                        frame.holders -= 1
                        if frame.holders <= 0:
                            frame.copy = None
                            self.frames_preserved -= 1


class VectorView:
    """A vector as seen by one snapshot."""

    __slots__ = ("vector", "representation", "data", "keyed", "pages", "replications", "page_class", "_cache")

    def __init__(self, vector):
        self.vector = vector
        self.representation = vector.representation
        self.data = vector.data
        self.keyed = vector.keyed
        self.page_class = vector.page_class
        self.pages = tuple(vector.pages)
        self.replications = vector.replications
        self._cache = None

    @property
    def is_runs(self) -> bool:
        return isinstance(self.data, PositionalRuns)

    def values(self, n: int) -> np.ndarray:
        """Stored elements ``[0, n)``: raw values or dictionary keys."""
        if self.is_runs:
            if self._cache is None:
                self._cache = rle_decode(self.data)
            return self._cache[:n]
        if self.page_class is PageClass.HUGE:
            return self.data[:n]
        # regular pages may be written after creation: copy, then restore
        # every page preserved since (writers preserve before writing)
        arr = self.data[:n].copy()
        if self.vector.replications != self.replications:
            self._patch(arr)
        return arr

    def take(self, offsets: np.ndarray) -> np.ndarray:
        if self.is_runs:
            return rle_values_at(self.data, offsets)
        if self.page_class is PageClass.HUGE:
            return self.data[offsets]
        out = self.data[offsets]
        if self.vector.replications != self.replications:
            n = int(offsets.max()) + 1 if len(offsets) else 0
            out = self.values(n)[offsets]
        return out

    def get(self, offset: int):
        return self.take(np.asarray([offset], dtype=np.int64))[0]

    def _patch(self, arr: np.ndarray) -> None:
        raw = arr.view(np.uint8)
        limit = raw.nbytes
        page_size = self.vector.page_size
        for p, desc in enumerate(self.pages):
            copy = desc.frame.copy
            if copy is None:
                continue
            lo = p * page_size
            if lo >= limit:
                continue
            hi = min(lo + page_size, limit)
            raw[lo:hi] = copy[: hi - lo]


class ChunkView:
    __slots__ = ("index", "base", "count", "valid", "vectors", "frozen", "temperature")

    def __init__(self, chunk):
        self.index = chunk.index
        self.base = chunk.base
        self.count = chunk.count
        self.frozen = chunk.frozen
        self.temperature = chunk.temperature
        self.valid = chunk.valid[: chunk.count].copy() if chunk.deleted else None
        self.vectors = [VectorView(v) for v in chunk.vectors]


class PartitionView:
    def __init__(self, partition, stats: SnapshotStats):
        self.partition = partition
        self.index = partition.index
        self.capacity = partition.capacity
        self.version = partition.version
        self.invalid = partition.invalid.copy()
        self.chunks = [ChunkView(c) for c in partition.chunks]
        self.next_tid = partition.next_tid
        for c in self.chunks:
            for v in c.vectors:
                stats.descriptors_copied += len(v.pages)

    def locate(self, tid: int) -> tuple[ChunkView, int]:
        ci, off = divmod(tid, self.capacity)
        if tid < 0 or ci >= len(self.chunks) or off >= self.chunks[ci].count:
            raise KeyError(f"TID {tid} did not exist at snapshot time")
        return self.chunks[ci], off

    def is_valid(self, tid: int) -> bool:
        try:
            chunk, off = self.locate(tid)
        except KeyError:
            return False
        if chunk.valid is not None and not chunk.valid[off]:
            return False
        return tid not in self.invalid


class RelationView:
    def __init__(self, relation):
        self.relation = relation
        self.name = relation.name
        self.schema = relation.schema
        self.partitions: list[PartitionView] = []
        self.dictionaries: dict[int, DictionaryView] = {}

    @classmethod
    def capture(cls, relation, stats: SnapshotStats) -> "RelationView":
        view = cls(relation)
        view.partitions = [PartitionView(p, stats) for p in relation.partitions]
        view.dictionaries = {a: d.view() for a, d in relation.dictionaries.items()}
        return view


class SnapshotHandle:
    """Transaction-consistent, immutable read view of an engine."""

    def __init__(self, epoch: int, manager: SnapshotManager):
        self.epoch = epoch
        self.manager = manager
        self.live = True
        self.stats = SnapshotStats(epoch)
        self.relations: dict[str, RelationView] = {}

    def relation(self, name: str) -> RelationView:
        self._check()
        try:
            return self.relations[name]
        except KeyError:
            raise KeyError(f"no relation {name!r} in snapshot {self.epoch}") from None

    def vector_views(self):
        for rv in self.relations.values():
            for pv in rv.partitions:
                for cv in pv.chunks:
                    yield from cv.vectors

    def _check(self) -> None:
        if not self.live:
            raise SnapshotError(f"snapshot {self.epoch} has been dropped")

    def read(self, relation: str, partition: int, tid: int, attr: int | str):
        """Value of one attribute as of snapshot creation."""
        rv = self.relation(relation)
        a = rv.schema.index_of(attr)
        pv = rv.partitions[partition]
        if not pv.is_valid(tid):
            raise KeyError(f"TID {tid} not valid in snapshot {self.epoch}")
        chunk, off = pv.locate(tid)
        vv = chunk.vectors[a]
        raw = vv.get(off)
        if vv.keyed:
            raw = rv.dictionaries[a].value_of(int(raw))
        return rv.schema.attributes[a].type.to_external(raw)

    def scan(self, relation: str):
        """All rows valid at snapshot time, as tuples of external values."""
        from .query import table_scan

        return table_scan(self, relation)

    def drop(self) -> None:
        self.manager.drop(self)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.live:
            self.drop()
