"""Engine facade tying storage, observation, snapshots and maintenance together."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Union

import numpy as np

from .freeze import FreezeReport, PersistReport, maintenance_tick, persist_frozen
from .index import TidIndex
from .observer import AccessObserver, ObserverConfig
from .schema import Schema
from .snapshot import SnapshotHandle, SnapshotManager
from .storage import Partition, Relation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EngineConfig:
    chunk_capacity: int = 65536
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    eager_compression: bool = False
    freezing_enabled: bool = True
    max_freezes_per_tick: int = 4
    rle_enabled: bool = True
    rle_threshold: float = 2.0
    max_rework_rounds: int = 3

    def __post_init__(self):
        if self.chunk_capacity < 1:
            raise ValueError("chunk capacity must be positive")
        if self.max_freezes_per_tick < 0:
            raise ValueError("max_freezes_per_tick must be >= 0")


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None):
        self.config = config or EngineConfig()
        obs = self.config.observer
        self.observer = AccessObserver(obs)
        self.snapshots = SnapshotManager(obs.page_size, obs.huge_page_size)
        self.relations: dict[str, Relation] = {}
        self.freeze_reports: list[FreezeReport] = []
        self.freezing_enabled = self.config.freezing_enabled

    def __repr__(self):
        return f"Engine({sorted(self.relations)})"

    # -- schema ---------------------------------------------------------

    def create_relation(
        self,
        name: str,
        schema: Schema,
        partitions: int = 1,
        route_attr: Optional[Union[int, str]] = None,
    ) -> Relation:
        if name in self.relations:
            raise ValueError(f"relation {name!r} already exists")
        rel = Relation(self, name, schema, partitions, route_attr)
        self.relations[name] = rel
        return rel

    def relation(self, name: str) -> Relation:
        try:
            return self.relations[name]
        except KeyError:
            raise KeyError(f"no relation {name!r}") from None

    def create_index(self, relation: str, attr: Union[int, str]) -> list[TidIndex]:
        """Secondary index on ``attr`` in every partition, bulk-built from current data."""
        rel = self.relation(relation)
        a = rel.schema.index_of(attr)
        attr_type = rel.schema.attributes[a].type
        out = []
        for part in rel.partitions:
            with part.latch:
                if a in part.indexes:
                    raise ValueError(f"{relation}.{rel.schema.attributes[a].name} is already indexed")
                tids, values = _live_column(part, a)
                idx = TidIndex.bulk(
                    _resolver(part, a), tids, values, convert=attr_type.to_internal
                )
                part.indexes[a] = idx
            out.append(idx)
        return out

    # -- snapshots ------------------------------------------------------

    def create_snapshot(self) -> SnapshotHandle:
        return self.snapshots.create(self)

    snapshot = create_snapshot

    def fork_cost(self) -> int:
        """Descriptors a snapshot would copy right now."""
        return sum(len(v.pages) for v in self._vectors())

    def expected_fork_cost(self) -> int:
        """Same quantity from the per-vector formula (for auditing)."""
        total = 0
        page, huge = self.config.observer.page_size, self.config.observer.huge_page_size
        for chunk, vec in self._chunk_vectors():
            if vec.page_class.value == "huge":
                total += -(-vec.stored_bytes() // huge)
            else:
                total += -(-vec.stored_bytes(chunk.count) // page)
        return total

    def page_census(self) -> int:
        """Preserved page copies still referenced by live snapshots."""
        return self.snapshots.frames_preserved

    def _chunk_vectors(self):
        for rel in self.relations.values():
            for part in rel.partitions:
                for chunk in part.chunks:
                    for vec in chunk.vectors:
                        yield chunk, vec

    def _vectors(self):
        for _, vec in self._chunk_vectors():
            yield vec

    # -- maintenance ----------------------------------------------------

    def maintenance_tick(self, max_chunks: Optional[int] = None) -> list[FreezeReport]:
        return maintenance_tick(self, max_chunks)

    def persist(self, sink: BinaryIO) -> list[PersistReport]:
        return [
            persist_frozen(part, sink)
            for rel in self.relations.values()
            for part in rel.partitions
        ]

    # -- accounting -----------------------------------------------------

    def chunk_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rel in self.relations.values():
            for part in rel.partitions:
                for chunk in part.chunks:
                    key = "frozen" if chunk.frozen else chunk.temperature.name.lower()
                    out[key] = out.get(key, 0) + 1
        return out


def _resolver(part: Partition, a: int):
    value_at = part.value_at
    return lambda tid: value_at(tid, a)


def _live_column(part: Partition, a: int) -> tuple[np.ndarray, np.ndarray]:
    """TIDs of valid tuples and their internal values of attribute ``a``."""
    tids, vals = [], []
    rel = part.relation
    for chunk in part.chunks:
        mask = part.valid_mask(chunk)
        vec = chunk.vectors[a]
        stored = vec.stored(chunk.count)[mask]
        if vec.keyed:
            view = rel.dictionaries[a].view()
            stored = view.resolve(stored)
        tids.append(chunk.base + np.flatnonzero(mask))
        vals.append(stored)
    if not tids:
        return np.zeros(0, np.int64), np.zeros(0, rel.schema.attributes[a].type.dtype)
    return np.concatenate(tids), np.concatenate(vals)


def create_relation(schema: Schema, p: int = 1, name: str = "r", engine: Optional[Engine] = None) -> Relation:
    """Convenience: a relation in ``engine`` (a fresh default engine if omitted)."""
    return (engine or Engine()).create_relation(name, schema, p)
