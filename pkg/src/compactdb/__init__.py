"""Hybrid OLTP/OLAP storage with hot/cold separation and compaction of frozen data."""

from .codecs import (
    NO_KEY,
    Dictionary,
    LengthRuns,
    PositionalRuns,
    ZipfPool,
    gen_zipf_pool,
    rle_decode,
    rle_encode,
    rle_gain,
    rle_value_at,
)
from .engine import Engine, EngineConfig, create_relation
from .freeze import (
    FreezeReport,
    FreezeTask,
    MaintenanceWorker,
    freeze_chunk,
    maintenance_tick,
    persist_frozen,
    read_records,
    relocate_tuple,
)
from .index import TidIndex
from .observer import AccessObserver, ObserverConfig, Temperature
from .query import (
    Arbitrary,
    Equality,
    Prefix,
    Q1Result,
    Range,
    ScanPlan,
    Strategy,
    eq_dict_probe,
    hash_set_probe,
    ordered_range_probe,
    plan_predicate,
    q1_aggregate,
    table_scan,
)
from .schema import AttrType, Schema, SchemaError
from .snapshot import FrozenWriteError, PageClass, SnapshotHandle, SnapshotStats
from .storage import DuplicateKeyError, InvalidRangeList, NotFoundError, Representation

__all__ = [name for name in dir() if not name.startswith("_")]
