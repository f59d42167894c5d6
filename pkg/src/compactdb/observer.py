"""Page-granular access observation and the temperature state machine.

OLTP write paths call :meth:`AccessObserver.note_read` /
:meth:`AccessObserver.note_write` (or set the same page bits inline). A
maintenance cycle reads and resets those bits and keeps a short per-chunk
history that :func:`classify` turns into temperature transitions.
"""

from __future__ import annotations

import threading
from collections import deque
from contextlib import nullcontext
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Hashable, Iterable, Mapping, Optional, Sequence


class Temperature(IntEnum):
    # ordered so that max() yields the warmest state
    FROZEN = 0
    COLD = 1
    COOLING = 2
    HOT = 3


@dataclass(frozen=True)
class ObserverConfig:
    page_size: int = 4096
    huge_page_size: int = 2 * 1024 * 1024
    cooling_max_fraction: float = 0.05
    cooling_confirm_cycles: int = 2
    cold_confirm_cycles: int = 3

    def __post_init__(self):
        if not 0 < self.cooling_max_fraction < 1:
            raise ValueError("cooling_max_fraction must lie in (0, 1)")
        if self.cooling_confirm_cycles < 1 or self.cold_confirm_cycles < 1:
            raise ValueError("confirm cycles must be >= 1")
        if self.page_size < 1 or self.huge_page_size < self.page_size:
            raise ValueError("page sizes must satisfy 0 < page_size <= huge_page_size")

    @property
    def history_length(self) -> int:
        return max(self.cooling_confirm_cycles, self.cold_confirm_cycles)


@dataclass
class CycleReport:
    """Pages seen during one observation cycle, keyed by vector key."""

    cycle: int
    reads: dict[Hashable, frozenset[int]] = field(default_factory=dict)
    writes: dict[Hashable, frozenset[int]] = field(default_factory=dict)
    transitions: list = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.reads and not self.writes

    def accessed(self, key: Hashable) -> frozenset[int]:
        return self.reads.get(key, frozenset()) | self.writes.get(key, frozenset())

    @property
    def pages_read(self) -> int:
        return sum(len(s) for s in self.reads.values())

    @property
    def pages_written(self) -> int:
        return sum(len(s) for s in self.writes.values())


class AccessObserver:
    """Software stand-in for the young/dirty page flags.

    Chunks are registered with the latch of their owning partition; a cycle
    swaps each chunk's page sets under that latch so no access is lost or
    counted twice across the boundary.
    """

    def __init__(self, config: ObserverConfig = ObserverConfig()):
        self.config = config
        self.cycle = 0
        self._chunks: dict[Hashable, object] = {}
        self._history: dict[Hashable, deque] = {}
        self._lock = threading.Lock()

    # -- registration ---------------------------------------------------

    def register_chunk(self, chunk) -> None:
        with self._lock:
            self._chunks[chunk.key] = chunk
            self._history[chunk.key] = deque(maxlen=self.config.history_length)

    def unregister_chunk(self, key: Hashable) -> None:
        with self._lock:
            self._chunks.pop(key, None)
            self._history.pop(key, None)

    def chunks(self) -> list:
        with self._lock:
            return list(self._chunks.values())

    # -- recording ------------------------------------------------------

    def note_read(self, vector, byte_offset: int) -> None:
        vector.read_pages.add(byte_offset // self.config.page_size)

    def note_write(self, vector, byte_offset: int) -> None:
        page = byte_offset // self.config.page_size
        vector.write_pages.add(page)
        tracker = vector.tracker
        if tracker is not None:
            tracker.add(page)

    # -- cycles ---------------------------------------------------------

    def run_cycle(self) -> CycleReport:
        self.cycle += 1
        report = CycleReport(self.cycle)
        for chunk in self.chunks():
            latch = getattr(chunk, "latch", None)
            with latch if latch is not None else nullcontext():
                swapped = []
                for vec in chunk.vectors:
                    r, w = vec.read_pages, vec.write_pages
                    vec.read_pages, vec.write_pages = set(), set()
                    swapped.append((vec.key, r, w))
            accessed = []
            for key, r, w in swapped:
                if r:
                    report.reads[key] = frozenset(r)
                if w:
                    report.writes[key] = frozenset(w)
                accessed.append(frozenset(r | w))
            hist = self._history.get(chunk.key)
            if hist is not None:
                hist.append(tuple(accessed))
        return report

    def history(self, key: Hashable) -> list[tuple[frozenset[int], ...]]:
        return list(self._history.get(key, ()))

    def reset_history(self, key: Hashable) -> None:
        hist = self._history.get(key)
        if hist is not None:
            hist.clear()

    def classify(self, exempt: Iterable[Hashable] = ()) -> list[tuple[object, Temperature]]:
        """Transitions for all registered chunks except ``exempt`` keys."""
        skip = set(exempt)
        states, recent, pages = {}, {}, {}
        for chunk in self.chunks():
            if chunk.key in skip:
                continue
            states[chunk.key] = chunk.temperature
            recent[chunk.key] = self.history(chunk.key)
            pages[chunk.key] = chunk.page_counts()
        moves = classify(states, recent, pages, self.config)
        return [(self._chunks[k], t) for k, t in moves]


def _fraction_ok(sets: Sequence[frozenset[int]], page_counts: Sequence[int], limit: float) -> bool:
    return all(len(s) <= limit * max(pc, 1) for s, pc in zip(sets, page_counts))


def classify_chunk(
    state: Temperature,
    recent: Sequence[Sequence[frozenset[int]]],
    page_counts: Sequence[int],
    config: ObserverConfig,
) -> Optional[Temperature]:
    """Next state of one chunk, or None.

    ``recent`` lists the accessed-page sets per vector for the last cycles,
    oldest first.
    """
    frac = config.cooling_max_fraction
    if state is Temperature.HOT:
        k = config.cooling_confirm_cycles
        if len(recent) < k:
            return None
        window = recent[-k:]
        first = window[0]
        if all(cyc == first for cyc in window[1:]) and _fraction_ok(first, page_counts, frac):
            return Temperature.COOLING
        return None
    if state is Temperature.COOLING:
        if recent and not _fraction_ok(recent[-1], page_counts, frac):
            return Temperature.HOT
        k = config.cold_confirm_cycles
        if len(recent) >= k and all(not any(cyc) for cyc in recent[-k:]):
            return Temperature.COLD
        return None
    # cold chunks only leave via freezing; frozen ones never change
    return None


def classify(
    states: Mapping[Hashable, Temperature],
    recent: Mapping[Hashable, Sequence[Sequence[frozenset[int]]]],
    page_counts: Mapping[Hashable, Sequence[int]],
    config: ObserverConfig = ObserverConfig(),
) -> list[tuple[Hashable, Temperature]]:
    out = []
    for key, state in states.items():
        nxt = classify_chunk(state, recent.get(key, ()), page_counts[key], config)
        if nxt is not None:
            out.append((key, nxt))
    return out
