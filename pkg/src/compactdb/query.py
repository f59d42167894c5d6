"""Snapshot scans with predicate pushdown, strategy selection and Q1.

Scans read exclusively through a :class:`SnapshotHandle`; they never touch
the access observer. Each chunk is processed columnar: a boolean selection
over its slots is derived from validity and the predicate (evaluated on keys
for dictionary-encoded vectors where the strategy allows), after which only
the selected positions of the projected vectors are decoded.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .index import prefix_successor
from .schema import EPOCH, AttrType, Kind
from .snapshot import ChunkView, PartitionView, RelationView, SnapshotHandle


class QueryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class Equality:
    attr: Union[int, str]
    value: Any


@dataclass(frozen=True)
class Prefix:
    attr: Union[int, str]
    prefix: str

    def __post_init__(self):
        if not self.prefix:
            raise QueryError("prefix must be non-empty")


@dataclass(frozen=True)
class Range:
    attr: Union[int, str]
    low: Any
    high: Any


@dataclass(frozen=True)
class Arbitrary:
    attr: Union[int, str]
    fn: Callable[[Any], bool]


Predicate = Union[Equality, Prefix, Range, Arbitrary, None]


class Strategy(Enum):
    PLAIN_FILTER = "PlainFilter"
    EQ_DICT_PROBE = "EqDictProbe"
    HASH_SET_PROBE = "HashSetProbe"
    ORDERED_RANGE = "OrderedRange"
    SECONDARY_INDEX_PROBE = "SecondaryIndexProbe"


@dataclass
class ScanPlan:
    strategy: Strategy
    predicate: Predicate = None
    attr: Optional[int] = None
    fallback: Optional[Strategy] = None
    chunk_modes: dict = field(default_factory=dict)

    def chunk_mode(self, chunk: ChunkView) -> str:
        """How one chunk is filtered: in key space or on plain values."""
        if self.attr is None:
            return "none"
        vv = chunk.vectors[self.attr]
        if vv.keyed and self.strategy in (
            Strategy.EQ_DICT_PROBE, Strategy.HASH_SET_PROBE, Strategy.ORDERED_RANGE,
        ):
            return "keys"
        return "values"


class _Bound:
    """Predicate translated to internal values of one attribute."""

    def __init__(self, pred, attr_type: AttrType):
        self.pred = pred
        self.type = attr_type
        if isinstance(pred, Equality):
            self.value = attr_type.to_internal(pred.value)
        elif isinstance(pred, Range):
            # ``None`` leaves that side open; an inverted range selects nothing
            self.low = None if pred.low is None else attr_type.to_internal(pred.low)
            self.high = None if pred.high is None else attr_type.to_internal(pred.high)
        elif isinstance(pred, Prefix):
            if not attr_type.is_string:
                raise QueryError("prefix predicates need a string attribute")
            self.low = attr_type.to_internal(pred.prefix)
            self.succ = prefix_successor(self.low)

    def scalar(self, v) -> bool:
        p = self.pred
        if isinstance(p, Equality):
            return v == self.value
        if isinstance(p, Range):
            return (self.low is None or self.low <= v) and (self.high is None or v <= self.high)
        if isinstance(p, Prefix):
            return v.startswith(self.low)
        return bool(p.fn(self.type.to_external(v)))

    def mask(self, vals: np.ndarray) -> np.ndarray:
        p = self.pred
        if isinstance(p, Equality):
            return vals == self.value
        if isinstance(p, Range):
            m = np.ones(len(vals), dtype=bool)
            if self.low is not None:
                m &= vals >= self.low
            if self.high is not None:
                m &= vals <= self.high
            return m
        if isinstance(p, Prefix):
            m = vals >= self.low
            if self.succ is not None:
                m &= vals < self.succ
            return m
        ext = self.type.to_external
        return np.fromiter((bool(p.fn(ext(v))) for v in vals.tolist()), dtype=bool, count=len(vals))


def _attr_of(schema, pred) -> Optional[int]:
    return None if pred is None else schema.index_of(pred.attr)


def _has_index(relation, a: int) -> bool:
    live = getattr(relation, "relation", relation)
    return any(a in p.indexes for p in live.partitions)


def plan_predicate(relation, predicate: Predicate) -> ScanPlan:
    """Pick a strategy; ``relation`` may be live or a snapshot view."""
    schema = relation.schema
    a = _attr_of(schema, predicate)
    if predicate is None:
        return ScanPlan(Strategy.PLAIN_FILTER)
    attr_type = schema.attributes[a].type
    live = getattr(relation, "relation", relation)
    if not attr_type.is_string:
        # numeric attributes are never dictionary encoded
        if isinstance(predicate, (Equality, Range)) and _has_index(live, a):
            return ScanPlan(Strategy.SECONDARY_INDEX_PROBE, predicate, a, fallback=Strategy.PLAIN_FILTER)
        return ScanPlan(Strategy.PLAIN_FILTER, predicate, a)
    ordered = live.dictionaries[a].ordered
    indexed = _has_index(live, a)
    if isinstance(predicate, Equality):
        if indexed:
            return ScanPlan(Strategy.SECONDARY_INDEX_PROBE, predicate, a, fallback=Strategy.EQ_DICT_PROBE)
        return ScanPlan(Strategy.EQ_DICT_PROBE, predicate, a)
    if isinstance(predicate, (Prefix, Range)):
        alt = Strategy.ORDERED_RANGE if ordered else Strategy.HASH_SET_PROBE
        if indexed:
            return ScanPlan(Strategy.SECONDARY_INDEX_PROBE, predicate, a, fallback=alt)
        return ScanPlan(alt, predicate, a)
    return ScanPlan(Strategy.HASH_SET_PROBE, predicate, a)


# ---------------------------------------------------------------------------
# chunk-level machinery


def chunk_valid_mask(pv: PartitionView, cv: ChunkView) -> np.ndarray:
    mask = cv.valid.copy() if cv.valid is not None else np.ones(cv.count, dtype=bool)
    pv.invalid.clear_mask(mask, cv.base)
    return mask


def column_values(rv: RelationView, cv: ChunkView, a: int, offsets: Optional[np.ndarray] = None) -> np.ndarray:
    """Internal values of attribute ``a`` (all slots, or ``offsets``)."""
    vv = cv.vectors[a]
    raw = vv.values(cv.count) if offsets is None else vv.take(offsets)
    if vv.keyed:
        return rv.dictionaries[a].resolve(raw)
    return raw


class _Selector:
    """Per-chunk qualifying offsets for one strategy."""

    def __init__(self, rv: RelationView, plan: ScanPlan):
        self.rv = rv
        self.plan = plan
        self.a = plan.attr
        self.bound = None
        if plan.predicate is not None:
            self.bound = _Bound(plan.predicate, rv.schema.attributes[self.a].type)
        self._key_filter: Optional[Callable[[np.ndarray], np.ndarray]] = None
        strat = plan.strategy
        if strat is Strategy.SECONDARY_INDEX_PROBE:
            strat = plan.fallback
        self.strategy = strat
        if self.a is not None and self.a in rv.dictionaries:
            self._key_filter = self._make_key_filter(strat)

    def _make_key_filter(self, strat: Strategy):
        view = self.rv.dictionaries[self.a]
        bound = self.bound
        if strat is Strategy.EQ_DICT_PROBE:
            key = view.key_of(bound.value)
            if key is None:
                return lambda keys: np.zeros(len(keys), dtype=bool)
            k = np.uint32(key)
            return lambda keys: keys == k
        if strat is Strategy.HASH_SET_PROBE:
            table = view.matching_table(bound.scalar)
            last = len(table) - 1
            return lambda keys: table[np.minimum(keys, last)]
        if strat is Strategy.ORDERED_RANGE:
            if isinstance(bound.pred, Prefix):
                lo, hi = view.key_range(bound.low, bound.succ, high_inclusive=False)
            else:
                lo, hi = view.key_range(bound.low, bound.high)
            klo, khi = np.uint32(max(lo, 0)), np.int64(hi)
            if hi < lo:
                return lambda keys: np.zeros(len(keys), dtype=bool)
            return lambda keys: (keys >= klo) & (keys <= khi)
        return None

    def offsets(self, pv: PartitionView, cv: ChunkView) -> np.ndarray:
        mask = chunk_valid_mask(pv, cv)
        if self.bound is not None:
            vv = cv.vectors[self.a]
            if vv.keyed and self._key_filter is not None:
                mask &= self._key_filter(vv.values(cv.count))
            else:
                mask &= self.bound.mask(column_values(self.rv, cv, self.a))
        return np.flatnonzero(mask)


def _index_tids(part, plan: ScanPlan, a: int) -> list[int]:
    idx = part.indexes[a]
    p = plan.predicate
    if isinstance(p, Equality):
        return idx.eq_lookup(p.value)
    if isinstance(p, Range):
        return idx.range_lookup(p.low, p.high)
    return idx.prefix_lookup(p.prefix)


def select(handle: SnapshotHandle, relation: str, plan: ScanPlan) -> Iterator[tuple[PartitionView, ChunkView, np.ndarray]]:
    """Yield ``(partition view, chunk view, ascending offsets)`` of qualifying rows."""
    rv = handle.relation(relation)
    selector = _Selector(rv, plan)
    for pv in rv.partitions:
        part = pv.partition
        use_index = (
            plan.strategy is Strategy.SECONDARY_INDEX_PROBE
            and plan.attr in part.indexes
            and part.version == pv.version
        )
        if not use_index:
            for cv in pv.chunks:
                offs = selector.offsets(pv, cv)
                if len(offs):
                    yield pv, cv, offs
            continue
        tids = np.asarray(_index_tids(part, plan, plan.attr), dtype=np.int64)
        if not len(tids):
            continue
        tids.sort()
        cis = tids // pv.capacity
        bounds = np.flatnonzero(np.diff(cis)) + 1
        for group in np.split(tids, bounds):
            ci = int(group[0] // pv.capacity)
            if ci >= len(pv.chunks):
                continue
            cv = pv.chunks[ci]
            offs = group - cv.base
            offs = offs[offs < cv.count]
            offs = offs[chunk_valid_mask(pv, cv)[offs]]
            if len(offs):
                yield pv, cv, offs


def _externalize(attr_type: AttrType, vals: np.ndarray) -> list:
    kind = attr_type.kind
    raw = vals.tolist()
    if kind is Kind.INT32 or kind is Kind.INT64:
        return raw
    if attr_type.is_string:
        return [b.decode("utf-8") for b in raw]
    if kind is Kind.DECIMAL:
        s = -attr_type.scale
        return [Decimal(v).scaleb(s) for v in raw]
    return [EPOCH + _dt.timedelta(microseconds=v) for v in raw]


def _rows(handle, relation: str, plan: ScanPlan, projection) -> Iterator[tuple]:
    rv = handle.relation(relation)
    schema = rv.schema
    attrs = list(range(len(schema))) if projection is None else [schema.index_of(p) for p in projection]
    types = [schema.attributes[a].type for a in attrs]
    for _, cv, offs in select(handle, relation, plan):
        cols = [_externalize(t, column_values(rv, cv, a, offs)) for a, t in zip(attrs, types)]
        yield from zip(*cols)


def table_scan(
    handle: SnapshotHandle,
    relation: str,
    predicate: Predicate = None,
    projection: Optional[Sequence[Union[int, str]]] = None,
    strategy: Optional[Strategy] = None,
) -> Iterator[tuple]:
    """Rows valid at snapshot time that satisfy ``predicate``.

    ``strategy`` forces a specific strategy instead of :func:`plan_predicate`.
    """
    rv = handle.relation(relation)
    plan = plan_predicate(rv, predicate)
    if strategy is not None:
        plan = forced_plan(rv, predicate, strategy)
    return _rows(handle, relation, plan, projection)


def forced_plan(rv, predicate: Predicate, strategy: Strategy) -> ScanPlan:
    schema = rv.schema
    a = _attr_of(schema, predicate)
    if strategy is not Strategy.PLAIN_FILTER:
        if predicate is None:
            raise QueryError(f"{strategy.value} needs a predicate")
        if a not in rv.dictionaries and strategy is not Strategy.SECONDARY_INDEX_PROBE:
            raise QueryError(f"{strategy.value} needs a string attribute")
    if strategy is Strategy.ORDERED_RANGE and not rv.dictionaries[a].ordered:
        raise QueryError("ordered range probes need the ordered-dictionary mode")
    if strategy is Strategy.ORDERED_RANGE and not isinstance(predicate, (Prefix, Range)):
        raise QueryError("ordered range probes need a prefix or range predicate")
    if strategy is Strategy.EQ_DICT_PROBE and not isinstance(predicate, Equality):
        raise QueryError("dictionary probes need an equality predicate")
    if strategy is Strategy.SECONDARY_INDEX_PROBE:
        if not _has_index(rv, a) or isinstance(predicate, Arbitrary):
            raise QueryError("no usable secondary index")
        fb = plan_predicate(rv, predicate).fallback or Strategy.PLAIN_FILTER
        return ScanPlan(strategy, predicate, a, fallback=fb)
    return ScanPlan(strategy, predicate, a)


def eq_dict_probe(handle, relation: str, attr, value, projection=None) -> Iterator[tuple]:
    return table_scan(handle, relation, Equality(attr, value), projection, Strategy.EQ_DICT_PROBE)


def hash_set_probe(handle, relation: str, attr, value_predicate: Callable[[Any], bool], projection=None) -> Iterator[tuple]:
    return table_scan(handle, relation, Arbitrary(attr, value_predicate), projection, Strategy.HASH_SET_PROBE)


def ordered_range_probe(handle, relation: str, attr, low, high, projection=None) -> Iterator[tuple]:
    return table_scan(handle, relation, Range(attr, low, high), projection, Strategy.ORDERED_RANGE)


def count_rows(handle, relation: str, predicate: Predicate = None, strategy: Optional[Strategy] = None) -> int:
    rv = handle.relation(relation)
    plan = plan_predicate(rv, predicate) if strategy is None else forced_plan(rv, predicate, strategy)
    return sum(len(offs) for _, _, offs in select(handle, relation, plan))


# ---------------------------------------------------------------------------
# Q1


@dataclass(frozen=True)
class Q1Row:
    ol_number: int
    sum_qty: int
    sum_amount: Decimal
    avg_qty: Fraction
    avg_amount: Fraction
    count_order: int

    def as_tuple(self) -> tuple:
        return (self.ol_number, self.sum_qty, self.sum_amount, self.avg_qty, self.avg_amount, self.count_order)


@dataclass
class Q1Result:
    rows: list[Q1Row]
    strategy: Strategy = Strategy.PLAIN_FILTER

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def as_tuples(self) -> list[tuple]:
        return [r.as_tuple() for r in self.rows]


Q1_ATTRS = ("ol_number", "ol_quantity", "ol_amount", "ol_delivery_d", "ol_dist_info")


def q1_aggregate(
    handle: SnapshotHandle,
    prefix: Optional[str],
    date_low,
    relation: str = "orderline",
    strategy: Optional[Strategy] = None,
) -> Q1Result:
    """Sum/avg/count per ``ol_number`` over orderlines with the given dist-info prefix
    delivered strictly after ``date_low``."""
    rv = handle.relation(relation)
    schema = rv.schema
    try:
        a_num, a_qty, a_amt, a_date, _ = (schema.index_of(n) for n in Q1_ATTRS)
    except Exception as e:
        raise QueryError(f"{relation} lacks orderline attributes: {e}") from None
    pred = None if prefix is None else Prefix("ol_dist_info", prefix)
    plan = plan_predicate(rv, pred) if strategy is None else forced_plan(rv, pred, strategy)
    date_raw = schema.attributes[a_date].type.to_internal(date_low)
    amt_scale = schema.attributes[a_amt].type.scale
    sums_q: dict[int, int] = {}
    sums_a: dict[int, int] = {}
    counts: dict[int, int] = {}
    for _, cv, offs in select(handle, relation, plan):
        dates = column_values(rv, cv, a_date, offs)
        keep = offs[dates > date_raw]
        if not len(keep):
            continue
        nums = column_values(rv, cv, a_num, keep).astype(np.int64)
        qty = column_values(rv, cv, a_qty, keep).astype(np.int64)
        amt = column_values(rv, cv, a_amt, keep).astype(np.int64)
        groups, inverse = np.unique(nums, return_inverse=True)
        sq = np.zeros(len(groups), dtype=np.int64)
        sa = np.zeros(len(groups), dtype=np.int64)
        np.add.at(sq, inverse, qty)
        np.add.at(sa, inverse, amt)
        cn = np.bincount(inverse, minlength=len(groups))
        for g, q, am, c in zip(groups.tolist(), sq.tolist(), sa.tolist(), cn.tolist()):
            sums_q[g] = sums_q.get(g, 0) + q
            sums_a[g] = sums_a.get(g, 0) + am
            counts[g] = counts.get(g, 0) + c
    rows = [
        Q1Row(
            g,
            sums_q[g],
            Decimal(sums_a[g]).scaleb(-amt_scale),
            Fraction(sums_q[g], counts[g]),
            Fraction(sums_a[g], counts[g] * 10**amt_scale),
            counts[g],
        )
        for g in sorted(counts)
    ]
    return Q1Result(rows, plan.strategy)
