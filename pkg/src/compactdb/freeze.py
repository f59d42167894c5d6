"""Reorganisation of cold data: relocation, freezing and persistence.

Freezing is optimistic. String vectors are dictionary-encoded without
holding the partition latch while the observer records writes that land on
the source vector in the meantime; every dirty page is then compared against
the new keys and repaired. Only the final swap of representations happens
under the latch, so it is atomic with respect to writers and snapshot
creation (which takes every partition latch).
"""

from __future__ import annotations

import itertools
import logging
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Callable, Iterator, Optional

import numpy as np

from .codecs import NO_KEY, PositionalRuns, rle_encode, rle_gain
from .observer import Temperature
from .storage import Chunk, Partition, Representation, Vector, mask_runs

log = logging.getLogger(__name__)

MAX_REWORK_ROUNDS = 3
RLE_THRESHOLD = 2.0

_freeze_seq = itertools.count(1)


class Phase(Enum):
    ENCODING = "encoding"
    REWORK = "rework"
    COMMIT = "commit"
    ABORTED = "aborted"


class FreezeError(RuntimeError):
    pass


@dataclass
class FreezeTask:
    partition: Partition
    chunk_index: int
    phase: Phase = Phase.ENCODING
    dirty_rounds: int = 0
    max_rework_rounds: int = MAX_REWORK_ROUNDS


@dataclass
class FreezeReport:
    relation: str
    partition: int
    chunk_index: int
    committed: bool
    tuples_frozen: int = 0
    bytes_before: int = 0
    bytes_after: int = 0
    reworked_pages: int = 0
    dirty_rounds: int = 0
    duration_seconds: float = 0.0
    representations: dict[str, str] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.bytes_before / self.bytes_after if self.bytes_after else float("inf")


# ---------------------------------------------------------------------------


def relocate_tuple(partition: Partition, tid: int) -> int:
    """Move a cooling/cold/frozen tuple into a hot chunk; returns the new TID."""
    return partition.relocate(tid)


ENCODE_SLICE = 8192


def _encode_strings(
    src: np.ndarray, live: np.ndarray, dictionary, keys: np.ndarray, pace: Optional[Callable[[], None]] = None
) -> None:
    """Fill ``keys`` with interned keys where ``live`` (NO_KEY elsewhere), slice by slice.

    ``keys`` must start out as NO_KEY; after an interruption it holds exactly
    the references taken so far.
    """
    for lo in range(0, len(src), ENCODE_SLICE):
        hi = min(len(src), lo + ENCODE_SLICE)
        sel = np.flatnonzero(live[lo:hi]) + lo
        if len(sel):
            uniq, inverse, counts = np.unique(src[sel], return_inverse=True, return_counts=True)
            ukeys = dictionary.intern_counts(uniq.tolist(), counts)
            keys[sel] = ukeys[inverse]
        if pace is not None:
            pace()


def _release_keys(keys: np.ndarray, dictionary) -> None:
    used = keys[keys != NO_KEY]
    if len(used):
        k, c = np.unique(used, return_counts=True)
        dictionary.release_counts(k, c)


def _rework_pages(src, keys, live, pages, elem_bytes, page_size, dictionary) -> None:
    n = len(keys)
    for p in sorted(pages):
        lo = (p * page_size) // elem_bytes
        hi = min(n, -(-((p + 1) * page_size) // elem_bytes))
        for slot in range(lo, hi):
            if not live[slot]:
                continue
            current = bytes(src[slot])
            old = int(keys[slot])
            if old != int(NO_KEY) and dictionary.value_of(old) == current:
                continue
            keys[slot] = dictionary.intern(current)
            if old != int(NO_KEY):
                dictionary.release(old)


def freeze_chunk(
    partition: Partition,
    chunk_index: int,
    *,
    max_rework_rounds: int = MAX_REWORK_ROUNDS,
    rle_threshold: float = RLE_THRESHOLD,
    on_round: Optional[Callable[[FreezeTask], None]] = None,
    pace: Optional[Callable[[], None]] = None,
) -> FreezeReport:
    """Compress a cold, full chunk onto huge pages.

    ``on_round`` is invoked before every dirty-page check (after the initial
    encoding and after each rework round) and lets callers inject writes.
    ``pace`` is called between units of work done without the partition
    latch, so a background caller can throttle itself.
    """
    rel = partition.relation
    engine = rel.engine
    t0 = time.perf_counter()
    task = FreezeTask(partition, chunk_index, max_rework_rounds=max_rework_rounds)
    report = FreezeReport(rel.name, partition.index, chunk_index, committed=False)

    with partition.latch:
        if not 0 <= chunk_index < len(partition.chunks):
            raise FreezeError(f"no chunk {chunk_index} in {partition}")
        chunk = partition.chunks[chunk_index]
        if chunk.frozen or chunk.freezing:
            raise FreezeError(f"chunk {chunk.key} is already frozen or freezing")
        if chunk.temperature is not Temperature.COLD:
            raise FreezeError(f"chunk {chunk.key} is {chunk.temperature.name}, not COLD")
        if not chunk.full:
            raise FreezeError(f"chunk {chunk.key} is not full")
        chunk.freezing = True
        n = chunk.count
        live = chunk.valid[:n].copy()
        sources = {a: chunk.vectors[a] for a in rel.string_attrs if not chunk.vectors[a].keyed}
        for vec in sources.values():
            vec.tracker = set()

    page_size = engine.config.observer.page_size
    keys: dict[int, np.ndarray] = {}
    try:
        # -- encoding: no latch held, writer keeps running
        for a, vec in sources.items():
            keys[a] = np.full(n, NO_KEY, dtype=np.uint32)
            _encode_strings(vec.data[:n].copy(), live, rel.dictionaries[a], keys[a], pace)
        # cold vectors are never written in place, so the rest can be prepared unlatched
        prepared = {}
        for a, vec in enumerate(chunk.vectors):
            if a not in sources:
                prepared[a] = _frozen_payload(vec, live, n, rle_threshold)
                if pace is not None:
                    pace()
        task.phase = Phase.REWORK
        while True:
            if on_round is not None:
                on_round(task)
            with partition.latch:
                dirty = {}
                for a, vec in sources.items():
                    if vec.tracker:
                        dirty[a] = vec.tracker
                        vec.tracker = set()
                if not dirty:
                    task.phase = Phase.COMMIT
                    _commit(partition, chunk, keys, prepared, live, rle_threshold, report)
                    break
            task.dirty_rounds += 1
            if task.dirty_rounds >= max_rework_rounds:
                task.phase = Phase.ABORTED
                break
            for a, pages in dirty.items():
                vec = sources[a]
                _rework_pages(vec.data, keys[a], live, pages, vec.elem_bytes, page_size, rel.dictionaries[a])
                report.reworked_pages += len(pages)
    except BaseException:
        task.phase = Phase.ABORTED
        raise
    finally:
        if task.phase is Phase.ABORTED:
            _abort(partition, chunk, sources, keys)

    report.dirty_rounds = task.dirty_rounds
    report.duration_seconds = time.perf_counter() - t0
    if report.committed:
        log.debug("froze %s: %d tuples, %d -> %d bytes", chunk.key, n, report.bytes_before, report.bytes_after)
    else:
        log.info("freeze of %s aborted after %d dirty rounds", chunk.key, task.dirty_rounds)
    return report


def _abort(partition: Partition, chunk: Chunk, sources: dict, keys: dict) -> None:
    rel = partition.relation
    for a, k in keys.items():
        _release_keys(k, rel.dictionaries[a])
    with partition.latch:
        for vec in sources.values():
            vec.tracker = None
        chunk.freezing = False
        chunk.set_temperature(Temperature.HOT)
    rel.engine.observer.reset_history(chunk.key)


def _frozen_payload(vec: Vector, live: np.ndarray, n: int, threshold: float) -> tuple:
    """``(stored data, keyed)`` for a vector that needs no dictionary encoding."""
    stored = vec.data[:n].copy()
    if vec.keyed:
        # eager mode: keys are already interned; deleted slots were released
        stored[~live] = NO_KEY
    if rle_gain(stored, 8) >= threshold:
        stored = rle_encode(stored)
    return stored, vec.keyed


def _commit(
    partition: Partition, chunk: Chunk, keys: dict, prepared: dict, live: np.ndarray, threshold: float, report
) -> None:
    """Swap in frozen vectors. Caller holds the partition latch."""
    rel = partition.relation
    engine = rel.engine
    n = chunk.count
    huge = engine.config.observer.huge_page_size
    epoch = engine.snapshots.epoch
    new_vectors = []
    for a, vec in enumerate(chunk.vectors):
        attr = rel.schema.attributes[a]
        report.bytes_before += n * attr.type.width
        if a in keys:
            stored, keyed = keys[a], True
            if rle_gain(stored, 8) >= threshold:
                stored = rle_encode(stored)
        else:
            stored, keyed = prepared[a]
        fv = Vector.frozen(vec.key, attr.type, stored, keyed, huge, epoch)
        fv.tracker = None
        new_vectors.append(fv)
        report.bytes_after += fv.stored_bytes()
        report.representations[attr.name] = fv.representation.value
    # bitmap deletions become invalid ranges; the frozen bitmap stays full
    if chunk.deleted:
        for b, e in mask_runs(~live, chunk.base):
            partition.invalid.add(b, e)
        partition.invalid_version += 1
        chunk.valid[:] = True
        chunk.deleted = 0
    chunk.vectors = new_vectors
    chunk.frozen = True
    chunk.freezing = False
    chunk.frozen_epoch = next(_freeze_seq)
    report.tuples_frozen = int(np.count_nonzero(live))
    report.committed = True


# ---------------------------------------------------------------------------


def _insertion_heads(engine) -> set:
    heads = set()
    for rel in engine.relations.values():
        for part in rel.partitions:
            if part.chunks and not part.chunks[-1].full:
                heads.add(part.chunks[-1].key)
    return heads


def _partition_of(engine, chunk) -> Partition:
    name, p, _ = chunk.key
    return engine.relations[name].partitions[p]


def maintenance_tick(
    engine, max_chunks: Optional[int] = None, pace: Optional[Callable[[], None]] = None
) -> list[FreezeReport]:
    """One observation cycle, its temperature transitions and bounded freezing."""
    if max_chunks is None:
        max_chunks = engine.config.max_freezes_per_tick
    observer = engine.observer
    observer.run_cycle()
    for chunk, temp in observer.classify(exempt=_insertion_heads(engine)):
        part = _partition_of(engine, chunk)
        with part.latch:
            if chunk.frozen or chunk.freezing:
                continue
            chunk.set_temperature(temp)
        if temp is Temperature.COOLING:
            # cold confirmation counts cycles spent in the cooling state
            observer.reset_history(chunk.key)
    reports = []
    if not engine.freezing_enabled:
        return reports
    for chunk in observer.chunks():
        if len(reports) >= max_chunks:
            break
        if chunk.temperature is Temperature.COLD and chunk.full and not chunk.frozen and not chunk.freezing:
            cfg = engine.config
            reports.append(freeze_chunk(
                _partition_of(engine, chunk),
                chunk.index,
                max_rework_rounds=cfg.max_rework_rounds,
                rle_threshold=cfg.rle_threshold if cfg.rle_enabled else float("inf"),
                pace=pace,
            ))
    engine.freeze_reports.extend(reports)
    return reports


class MaintenanceWorker(threading.Thread):
    """Background maintenance with a duty-cycle limit.

    Work is accounted in slices: whenever ``quantum`` seconds of work have
    accumulated (inside a freeze, between encoding slices, or at the end of a
    tick) the worker sleeps ``busy * (1 - duty) / duty``, so writers never
    lose more than roughly one quantum at a time. :meth:`pause` parks the
    worker at the next such point; paused time does not count as rest.
    """

    def __init__(
        self, engine, interval: float = 0.05, duty: float = 0.25, max_chunks: int = 1, quantum: float = 0.005
    ):
        super().__init__(name="maintenance", daemon=True)
        if not 0 < duty <= 1:
            raise ValueError("duty must lie in (0, 1]")
        self.engine = engine
        self.interval = interval
        self.duty = duty
        self.max_chunks = max_chunks
        self.quantum = quantum
        self.reports: list[FreezeReport] = []
        self.ticks = 0
        self.error: Optional[BaseException] = None
        self._halt = threading.Event()
        self._cond = threading.Condition()
        self._run = True
        self._active = False  # inside a tick and not parked
        self._slice_start = 0.0

    def _rest(self, seconds: float) -> None:
        """Sleep ``seconds`` of unpaused time; parks while paused."""
        remaining = seconds
        while remaining > 0 and not self._halt.is_set():
            t0 = time.perf_counter()
            with self._cond:
                self._cond.wait_for(lambda: not self._run or self._halt.is_set(), timeout=remaining)
            remaining -= time.perf_counter() - t0
            if self._park():
                continue
        self._park()

    def _park(self) -> bool:
        with self._cond:
            if self._run or self._halt.is_set():
                return False
            was_active, self._active = self._active, False
            self._cond.notify_all()
            self._cond.wait_for(lambda: self._run or self._halt.is_set())
            self._active = was_active
            return True

    def _pace(self) -> None:
        busy = time.perf_counter() - self._slice_start
        if busy >= self.quantum:
            self._rest(busy * (1 - self.duty) / self.duty)
            self._slice_start = time.perf_counter()

    def run(self) -> None:
        try:
            while not self._halt.is_set():
                with self._cond:
                    self._cond.wait_for(lambda: self._run or self._halt.is_set())
                    if self._halt.is_set():
                        break
                    self._active = True
                try:
                    self._slice_start = time.perf_counter()
                    self.reports.extend(maintenance_tick(self.engine, self.max_chunks, pace=self._pace))
                    self.ticks += 1
                    busy = time.perf_counter() - self._slice_start
                finally:
                    with self._cond:
                        self._active = False
                        self._cond.notify_all()
                self._rest(max(self.interval, busy * (1 - self.duty) / self.duty))
        except BaseException as e:  # surfaced by stop()
            self.error = e

    def pause(self) -> None:
        """Returns once the worker is idle or parked between slices."""
        with self._cond:
            self._run = False
            self._cond.notify_all()
            self._cond.wait_for(lambda: not self._active or not self.is_alive())

    def resume(self) -> None:
        with self._cond:
            self._run = True
            self._cond.notify_all()

    def stop(self) -> None:
        self._halt.set()
        with self._cond:
            self._run = True
            self._cond.notify_all()
        self.join()
        if self.error is not None:
            raise self.error


# ---------------------------------------------------------------------------
# persistence
#
# A persist stream is a sequence of records. Every record is
#
#   magic "CDBR" | u16 format version | u8 record type | u8 0 | u32 payload length | u32 crc32(payload)
#
# followed by the payload, all little endian. Strings are u16-length-prefixed
# UTF-8. Payloads:
#
#   chunk (1):        relation, u32 partition, u32 chunk index, u64 freeze sequence,
#                     u32 tuple count, u16 attribute count, then per attribute:
#                     u8 representation tag, u8 keyed, dtype string, u32 crc32 of
#                     the data, and either u64 byte length + raw array bytes
#                     (uncompressed / keys) or u64 run count + u64 positions + values
#                     (positional RLE)
#   invalidation (2): relation, u32 partition, u64 range count, then u64 begin/end pairs
#   dictionary (3):   relation, u16 attribute, u64 version, u32 slot count, then per
#                     slot u64 refcount + u16 length + bytes (length 0xFFFF = free slot)

MAGIC = b"CDBR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBII")


class RecordType(Enum):
    CHUNK = 1
    INVALIDATION = 2
    DICTIONARY = 3


_REP_TAGS = {
    Representation.UNCOMPRESSED: 0,
    Representation.DICT_KEYS: 1,
    Representation.POSITIONAL_RLE: 2,
}
_TAG_REPS = {v: k for k, v in _REP_TAGS.items()}


class PersistError(RuntimeError):
    pass


@dataclass
class PersistReport:
    relation: str
    partition: int
    chunk_payloads: int = 0
    invalidation_records: int = 0
    dictionary_records: int = 0
    bytes_written: int = 0


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _write_record(sink: BinaryIO, rtype: RecordType, payload: bytes) -> int:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, rtype.value, 0, len(payload), zlib.crc32(payload))
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def _chunk_payload(rel_name: str, partition: int, chunk: Chunk) -> bytes:
    parts = [
        _pack_str(rel_name),
        struct.pack("<IIQIH", partition, chunk.index, chunk.frozen_epoch, chunk.count, len(chunk.vectors)),
    ]
    for vec in chunk.vectors:
        if isinstance(vec.data, PositionalRuns):
            body = (
                struct.pack("<Q", vec.data.run_count)
                + vec.data.positions.astype("<u8").tobytes()
                + vec.data.values.tobytes()
            )
            dtype = vec.data.values.dtype.str
        else:
            body = struct.pack("<Q", vec.data.nbytes) + vec.data.tobytes()
            dtype = vec.data.dtype.str
        parts.append(struct.pack("<BB", _REP_TAGS[vec.representation], int(vec.keyed)))
        parts.append(_pack_str(dtype))
        parts.append(struct.pack("<I", zlib.crc32(body)))
        parts.append(body)
    return b"".join(parts)


def _invalidation_payload(rel_name: str, partition: int, ranges: list) -> bytes:
    flat = np.asarray(ranges, dtype="<u8").reshape(-1)
    return _pack_str(rel_name) + struct.pack("<IQ", partition, len(ranges)) + flat.tobytes()


def _dictionary_payload(rel_name: str, attr: int, d) -> bytes:
    with d.lock:
        values = list(d._values)
        refs = list(d._refs)
        version = d.version
    parts = [_pack_str(rel_name), struct.pack("<HQI", attr, version, len(values))]
    for v, r in zip(values, refs):
        if v is None:
            parts.append(struct.pack("<QH", r, 0xFFFF))
        else:
            parts.append(struct.pack("<QH", r, len(v)) + v)
    return b"".join(parts)


def persist_frozen(partition: Partition, sink: BinaryIO) -> PersistReport:
    """Write frozen chunks not persisted yet, plus the invalidation status."""
    rel = partition.relation
    report = PersistReport(rel.name, partition.index)
    try:
        with partition.latch:
            pending = [
                c for c in partition.chunks
                if c.frozen and partition.persisted_chunks.get(c.index) != c.frozen_epoch
            ]
            payloads = [(c, _chunk_payload(rel.name, partition.index, c)) for c in pending]
            inval = _invalidation_payload(rel.name, partition.index, partition.invalid.ranges())
        for a, d in rel.dictionaries.items():
            if rel.persisted_dictionaries.get(a) != d.version:
                report.bytes_written += _write_record(sink, RecordType.DICTIONARY, _dictionary_payload(rel.name, a, d))
                report.dictionary_records += 1
                rel.persisted_dictionaries[a] = d.version
        for chunk, payload in payloads:
            report.bytes_written += _write_record(sink, RecordType.CHUNK, payload)
            report.chunk_payloads += 1
            partition.persisted_chunks[chunk.index] = chunk.frozen_epoch
        report.bytes_written += _write_record(sink, RecordType.INVALIDATION, inval)
        report.invalidation_records += 1
    except OSError as e:
        raise PersistError(f"persist of {partition} failed: {e}") from e
    return report


# -- reading ---------------------------------------------------------------


@dataclass
class PersistRecord:
    type: RecordType
    relation: str
    partition: Optional[int] = None
    chunk_index: Optional[int] = None
    freeze_seq: Optional[int] = None
    count: Optional[int] = None
    vectors: list = field(default_factory=list)  # (Representation, keyed, ndarray | PositionalRuns)
    ranges: list = field(default_factory=list)
    attr: Optional[int] = None
    version: Optional[int] = None
    dictionary: list = field(default_factory=list)  # (refcount, bytes | None)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise PersistError("truncated payload")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def _parse(rtype: RecordType, payload: bytes) -> PersistRecord:
    cur = _Cursor(payload)
    rec = PersistRecord(rtype, cur.string())
    if rtype is RecordType.CHUNK:
        rec.partition, rec.chunk_index, rec.freeze_seq, rec.count, nattr = cur.unpack("<IIQIH")
        for _ in range(nattr):
            tag, keyed = cur.unpack("<BB")
            dtype = np.dtype(cur.string())
            (crc,) = cur.unpack("<I")
            start = cur.pos
            rep = _TAG_REPS[tag]
            if rep is Representation.POSITIONAL_RLE:
                (runs,) = cur.unpack("<Q")
                pos = np.frombuffer(cur.take(8 * runs), dtype="<u8").astype(np.uint64)
                vals = np.frombuffer(cur.take(runs * dtype.itemsize), dtype=dtype).copy()
                data = PositionalRuns(pos, vals)
            else:
                (nbytes,) = cur.unpack("<Q")
                data = np.frombuffer(cur.take(nbytes), dtype=dtype).copy()
            if zlib.crc32(payload[start:cur.pos]) != crc:
                raise PersistError("vector checksum mismatch")
            rec.vectors.append((rep, bool(keyed), data))
    elif rtype is RecordType.INVALIDATION:
        rec.partition, nranges = cur.unpack("<IQ")
        flat = np.frombuffer(cur.take(16 * nranges), dtype="<u8")
        rec.ranges = [tuple(p) for p in flat.reshape(-1, 2).tolist()]
    else:
        rec.attr, rec.version, nslots = cur.unpack("<HQI")
        for _ in range(nslots):
            refs, length = cur.unpack("<QH")
            rec.dictionary.append((refs, None if length == 0xFFFF else cur.take(length)))
    return rec


def read_records(source: BinaryIO) -> Iterator[PersistRecord]:
    while True:
        head = source.read(_HEADER.size)
        if not head:
            return
        if len(head) < _HEADER.size:
            raise PersistError("truncated record header")
        magic, version, rtype, _, length, crc = _HEADER.unpack(head)
        if magic != MAGIC:
            raise PersistError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise PersistError(f"unsupported format version {version}")
        payload = source.read(length)
        if len(payload) != length or zlib.crc32(payload) != crc:
            raise PersistError("record checksum mismatch")
        yield _parse(RecordType(rtype), payload)
