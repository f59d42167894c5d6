import datetime as dt
from collections import Counter
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactdb import gen_zipf_pool
from compactdb.bench import WorkloadConfig
from compactdb.bench.workload import Workload, orderline_schema
from compactdb.query import (
    Arbitrary,
    Equality,
    Prefix,
    QueryError,
    Range,
    Strategy,
    count_rows,
    eq_dict_probe,
    hash_set_probe,
    ordered_range_probe,
    plan_predicate,
    q1_aggregate,
    table_scan,
)
from compactdb.schema import EPOCH
from helpers import fill, freeze_now, item_row, item_schema, small_engine
from oracle import RowStore, q1_naive

NAMES = gen_zipf_pool(60, 1.2, 8, seed=4).values


def mixed_items(n=300, ordered=False, index=False, seed=0, capacity=32):
    """Item relation with frozen, cold-relocated and hot chunks plus an oracle."""
    eng = small_engine(capacity=capacity)
    rel = eng.create_relation("items", item_schema())
    if ordered:
        rel.use_ordered_dictionary("name", NAMES + ["alpha"])
    rng = np.random.default_rng(seed)
    oracle = RowStore(rel.schema)
    for i in range(n):
        row = item_row(i, rng, names=NAMES)
        rel.insert(row)
        oracle.insert(row)
    part = rel.partitions[0]
    for ci in range(0, len(part.chunks) - 1, 2):
        freeze_now(part, ci)
    for i in rng.choice(n, n // 10, replace=False).tolist():
        key = (i,)
        tid = part.lookup(i)
        if i % 3 == 0:
            part.delete(tid)
            oracle.delete(key)
        else:
            name = str(rng.choice(NAMES))
            part.update(tid, "name", name)
            oracle.update(key, 2, name)
    if index:
        eng.create_index("items", "name")
    return eng, rel, oracle


# -- planning --------------------------------------------------------------


def test_plan_rules():
    eng, rel, _ = mixed_items(40)
    assert plan_predicate(rel, None).strategy is Strategy.PLAIN_FILTER
    assert plan_predicate(rel, Equality("name", "x")).strategy is Strategy.EQ_DICT_PROBE
    assert plan_predicate(rel, Arbitrary("name", str.isupper)).strategy is Strategy.HASH_SET_PROBE
    assert plan_predicate(rel, Prefix("name", "B")).strategy is Strategy.HASH_SET_PROBE
    assert plan_predicate(rel, Range("grp", 1, 3)).strategy is Strategy.PLAIN_FILTER
    eng.create_index("items", "name")
    assert plan_predicate(rel, Prefix("name", "B")).strategy is Strategy.SECONDARY_INDEX_PROBE
    assert plan_predicate(rel, Equality("name", "x")).strategy is Strategy.SECONDARY_INDEX_PROBE
    assert plan_predicate(rel, Arbitrary("name", str.isupper)).strategy is Strategy.HASH_SET_PROBE
    _, orel, _ = mixed_items(40, ordered=True)
    assert plan_predicate(orel, Range("name", "B", "D")).strategy is Strategy.ORDERED_RANGE


def test_forced_strategy_errors():
    eng, rel, _ = mixed_items(40)
    snap = eng.create_snapshot()
    with pytest.raises(QueryError):
        list(table_scan(snap, "items", Range("name", "A", "B"), strategy=Strategy.ORDERED_RANGE))
    with pytest.raises(QueryError):
        list(table_scan(snap, "items", Prefix("name", "A"), strategy=Strategy.EQ_DICT_PROBE))
    with pytest.raises(QueryError):
        list(table_scan(snap, "items", Prefix("name", "A"), strategy=Strategy.SECONDARY_INDEX_PROBE))
    with pytest.raises(QueryError):
        Prefix("name", "")


# -- scans -----------------------------------------------------------------


def test_unfiltered_scan_conserves_rows():
    eng, rel, oracle = mixed_items(300)
    with eng.create_snapshot() as snap:
        assert Counter(table_scan(snap, "items")) == oracle.multiset()
        assert count_rows(snap, "items") == len(oracle.rows)
        assert Counter(table_scan(snap, "items", projection=["name", "id"])) == oracle.multiset(projection=(2, 0))


def test_relocated_tuples_appear_once():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    rows = fill(rel, 12)
    part = rel.partitions[0]
    freeze_now(part, 0)
    for t in (1, 2, 3):
        part.update(t, "price", Decimal("1.00"))
    with eng.create_snapshot() as snap:
        got = sorted(table_scan(snap, "items"))
    expect = sorted(r if r[0] not in (1, 2, 3) else r[:3] + (Decimal("1.00"),) for r in rows)
    assert got == expect


CASES = [
    ("eq", lambda v: Equality("name", v)),
    ("prefix", lambda v: Prefix("name", v[:1])),
    ("range", lambda v: Range("name", "B", v)),
    ("arbitrary", lambda v: Arbitrary("name", lambda s: "Q" in s)),
]


def _oracle_filter(pred):
    if isinstance(pred, Equality):
        return lambda r: r[2] == pred.value
    if isinstance(pred, Prefix):
        return lambda r: r[2].startswith(pred.prefix)
    if isinstance(pred, Range):
        return lambda r: pred.low <= r[2] <= pred.high
    return lambda r: pred.fn(r[2])


def _applicable(pred, ordered, indexed):
    out = [Strategy.PLAIN_FILTER]
    if isinstance(pred, Equality):
        out.append(Strategy.EQ_DICT_PROBE)
    out.append(Strategy.HASH_SET_PROBE)
    if ordered and isinstance(pred, (Prefix, Range)):
        out.append(Strategy.ORDERED_RANGE)
    if indexed and not isinstance(pred, Arbitrary):
        out.append(Strategy.SECONDARY_INDEX_PROBE)
    return out


@pytest.mark.parametrize("ordered,indexed", [(False, False), (True, False), (False, True), (True, True)])
@pytest.mark.parametrize("seed", range(3))
def test_strategies_agree_with_oracle(ordered, indexed, seed):
    eng, rel, oracle = mixed_items(400, ordered=ordered, index=indexed, seed=seed)
    with eng.create_snapshot() as snap:
        for name, make in CASES:
            for v in (NAMES[0], NAMES[7], "alpha", "ZZZ"):
                pred = make(v)
                expect = oracle.multiset(_oracle_filter(pred))
                for strat in _applicable(pred, ordered, indexed):
                    got = Counter(table_scan(snap, "items", pred, strategy=strat))
                    assert got == expect, (name, v, strat)
                assert Counter(table_scan(snap, "items", pred)) == expect


def test_eq_probe_value_only_in_hot_chunk():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    fill(rel, 10)
    freeze_now(rel.partitions[0], 0)
    rel.insert((99, 1, "unique", Decimal(1)))
    assert rel.dictionaries[2].key_of(b"unique") is None
    with eng.create_snapshot() as snap:
        got = list(eq_dict_probe(snap, "items", "name", "unique", ["id"]))
    assert got == [(99,)]


def test_eq_probe_after_refcount_drops_to_zero():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    for i in range(8):
        rel.insert((i, 0, "once" if i == 3 else "other", Decimal(0)))
    part = rel.partitions[0]
    freeze_now(part, 0)
    part.delete(3)
    with eng.create_snapshot() as snap:
        assert list(eq_dict_probe(snap, "items", "name", "once")) == []
        assert len(list(eq_dict_probe(snap, "items", "name", "other"))) == 7


def test_hash_probe_contains_q_on_zipf_names():
    pool = gen_zipf_pool(2000, 1.2, 8, seed=2)
    eng = small_engine(capacity=256, page_size=256)
    rel = eng.create_relation("items", item_schema())
    rng = np.random.default_rng(3)
    rows = [(i, 0, v, Decimal(0)) for i, v in enumerate(pool.sample(3000, rng))]
    for r in rows:
        rel.insert(r)
    for ci in range(len(rel.partitions[0].chunks) - 1):
        freeze_now(rel.partitions[0], ci)
    with eng.create_snapshot() as snap:
        got = Counter(hash_set_probe(snap, "items", "name", lambda s: "Q" in s))
        assert got == Counter(r for r in rows if "Q" in r[2])
        assert Counter(hash_set_probe(snap, "items", "name", lambda s: True)) == Counter(rows)
        assert list(hash_set_probe(snap, "items", "name", lambda s: False)) == []


def test_ordered_range_full_domain_and_figure_example():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    rel.use_ordered_dictionary("name", ["AAA", "BBB", "CCC", "DDD", "EEE"])
    names = ["BBB", "AAA", "CCC", "DDD", "EEE", "BBB", "DDD", "AAA"]
    for i, nm in enumerate(names):
        rel.insert((i, 0, nm, Decimal(0)))
    freeze_now(rel.partitions[0], 0)
    eng.create_index("items", "name")
    view = rel.dictionaries[2].view()
    assert view.key_range(None, None) == (0, 4)
    with eng.create_snapshot() as snap:
        got = sorted(r[0] for r in ordered_range_probe(snap, "items", "name", "BBB", "DDD"))
        idx = rel.partitions[0].indexes[2]
        assert got == sorted(idx.range_lookup("BBB", "DDD"))
        assert got == [i for i, nm in enumerate(names) if "BBB" <= nm <= "DDD"]
        assert len(list(ordered_range_probe(snap, "items", "name", None, None))) == len(names)


@settings(max_examples=60)
@given(st.data())
def test_ordered_range_agrees_with_hash_probe(data):
    eng, rel, oracle = _RANGE_FIXTURE
    lo = data.draw(st.sampled_from(NAMES))
    hi = data.draw(st.sampled_from(NAMES))
    with eng.create_snapshot() as snap:
        a = Counter(ordered_range_probe(snap, "items", "name", lo, hi))
        b = Counter(table_scan(snap, "items", Range("name", lo, hi), strategy=Strategy.HASH_SET_PROBE))
    assert a == b == oracle.multiset(lambda r: lo <= r[2] <= hi)


_RANGE_FIXTURE = mixed_items(300, ordered=True, seed=7)


def test_many_random_ranges_agree(rng):
    eng, rel, oracle = _RANGE_FIXTURE
    pairs = rng.integers(0, len(NAMES), (10_000, 2))
    sorted_names = sorted(NAMES)
    with eng.create_snapshot() as snap:
        for i, j in pairs[:10_000:50].tolist():
            lo, hi = sorted_names[min(i, j)], sorted_names[max(i, j)]
            a = count_rows(snap, "items", Range("name", lo, hi), Strategy.ORDERED_RANGE)
            b = count_rows(snap, "items", Range("name", lo, hi), Strategy.HASH_SET_PROBE)
            assert a == b
    # the full 10 000 are exercised in the acceptance suite


# -- Q1 --------------------------------------------------------------------


def _orderline_engine(capacity=16_384):
    eng = small_engine(capacity=capacity, page_size=4096, huge=2 * 1024 * 1024)
    rel = eng.create_relation("orderline", orderline_schema())
    return eng, rel


def test_q1_empty_relation():
    eng, _ = _orderline_engine()
    with eng.create_snapshot() as snap:
        assert len(q1_aggregate(snap, "B", "2007-01-02")) == 0


def test_q1_single_row():
    eng, rel = _orderline_engine()
    row = (1, 1, 1, 1, 7, 1, dt.datetime(2007, 1, 3), 5, Decimal("10.00"), "B" * 24)
    rel.insert(row)
    with eng.create_snapshot() as snap:
        res = q1_aggregate(snap, "B", dt.datetime(2007, 1, 2))
    assert res.as_tuples() == [(1, 5, Decimal(10), 5, 10, 1)]


def _external_rows(cols):
    """Generator columns to external tuples without going through the engine."""
    out = []
    for r in zip(*(c.tolist() for c in cols)):
        r = list(r)
        r[6] = EPOCH + dt.timedelta(microseconds=r[6])
        r[8] = Decimal(r[8]).scaleb(-2)
        r[9] = r[9].decode("ascii")
        out.append(tuple(r))
    return out


def _prefix_for(rows, target):
    counts = Counter(r[9][:k] for r in rows for k in (1, 2, 3))
    sel = {p: n / len(rows) for p, n in counts.items()}
    return min(sel, key=lambda p: (abs(sel[p] - target) / target, p)), sel


@pytest.fixture(scope="module")
def q1_data():
    cfg = WorkloadConfig(name_pool_size=5000, seed=5)
    wl = Workload(cfg)
    cols = wl.orderline_columns(100_000)
    # spread delivery dates over two days so the date bound filters
    cols[6] = cols[6] + np.arange(100_000, dtype=np.int64) * 1_700_000
    rows = _external_rows(cols)
    eng, rel = _orderline_engine()
    rel.insert_many(cols)
    part = rel.partitions[0]
    for ci in range(len(part.chunks) - 2):
        freeze_now(part, ci)
    return eng, rows


@pytest.mark.parametrize("target", [0.001, 0.03, 0.30])
def test_q1_matches_naive_aggregation(q1_data, target):
    eng, rows = q1_data
    prefix, sel = _prefix_for(rows, target)
    assert sel[prefix] == pytest.approx(target, rel=0.5)
    date = dt.datetime(2007, 1, 2, 12)
    expect = q1_naive(rows, prefix, date)
    assert expect
    with eng.create_snapshot() as snap:
        for strat in (None, Strategy.PLAIN_FILTER, Strategy.HASH_SET_PROBE):
            got = q1_aggregate(snap, prefix, date, strategy=strat)
            assert got.as_tuples() == expect
